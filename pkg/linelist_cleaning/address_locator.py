"""Address standardization, guardian text removal, gazetteer lookup and geocoding"""
import dataclasses
import functools
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import pandas as pd
import requests
import toml

from linelist_cleaning.core_model import (
    DEFAULT_PARAMS_PATH, Action, CellVerdict, ConfigurationError, GeocodingError, Phase
)
from linelist_cleaning.utils import validate_paths, verify_in_list

logger = logging.getLogger(__name__)

GAZETTEER_COLUMNS = ["id", "name", "aliases", "level", "parent_id"]

RELATION_PHRASES = {
    ("s", "o"), ("d", "o"), ("w", "o"), ("c", "o"),
    ("son", "of"), ("daughter", "of"), ("wife", "of"), ("care", "of"),
}
LOCATION_KEYWORDS = {
    "village", "district", "block", "tehsil", "post", "office", "city", "town", "ward",
    "near", "road", "street", "colony", "house", "no", "number", "mohalla",
}
_PUNCTUATION = re.compile(r"[^\w\s]|_")


class GazetteerLevel(str, Enum):
    DISTRICT = "District"
    BLOCK = "Block"
    CITY = "City"
    TOWN = "Town"
    VILLAGE = "Village"


SETTLEMENT_LEVELS = (GazetteerLevel.CITY, GazetteerLevel.TOWN, GazetteerLevel.VILLAGE)
# higher is more specific
LEVEL_RANK = {
    GazetteerLevel.DISTRICT: 0,
    GazetteerLevel.BLOCK: 1,
    GazetteerLevel.CITY: 2,
    GazetteerLevel.TOWN: 3,
    GazetteerLevel.VILLAGE: 4,
}


@dataclass(frozen=True)
class GazetteerEntry:
    id: str
    name: str
    aliases: Tuple[str, ...]
    level: GazetteerLevel
    parent_id: Optional[str] = None


@dataclass(frozen=True)
class LocationDetail:
    district: Optional[str] = None
    block: Optional[str] = None
    settlement: Optional[str] = None
    matched_gazetteer_id: Optional[str] = None
    latitude: Optional[float] = None
    longitude: Optional[float] = None

    def __post_init__(self):
        if self.latitude is not None and not -90 <= self.latitude <= 90:
            raise ValueError("Latitude {} is outside [-90, 90]".format(self.latitude))
        if self.longitude is not None and not -180 <= self.longitude <= 180:
            raise ValueError("Longitude {} is outside [-180, 180]".format(self.longitude))
        if self.matched_gazetteer_id and self.is_empty():
            raise ValueError("A matched location needs a district, block or settlement")

    def is_empty(self):
        return not (self.district or self.block or self.settlement)

    def names(self):
        """Non-empty names from the most to the least specific"""
        return [name for name in (self.settlement, self.block, self.district) if name]

    def describe(self):
        return ", ".join(self.names())

    def query_string(self):
        """Standardized geocoder query, also the cache key"""
        return " ".join(name.lower() for name in self.names())

    def with_coordinates(self, latitude, longitude):
        return dataclasses.replace(self, latitude=float(latitude), longitude=float(longitude))


def _normalize_name(name):
    return " ".join(_PUNCTUATION.sub(" ", name.lower()).split())


class Gazetteer:
    """Reference list of districts, blocks and settlements

    Names and aliases are indexed as lowercase token tuples so addresses can be matched
    by exact token sequences.
    """

    def __init__(self, entries):
        self.entries = {}
        for entry in entries:
            if entry.id in self.entries:
                raise ConfigurationError("Gazetteer id {} is not unique".format(entry.id))
            self.entries[entry.id] = entry
        self._validate()

        self.index = {}
        for entry in self.entries.values():
            for name in (entry.name,) + entry.aliases:
                key = tuple(_normalize_name(name).split())
                if key and entry.id not in self.index.setdefault(key, []):
                    self.index[key].append(entry.id)
        self.max_tokens = max((len(key) for key in self.index), default=0)

    @classmethod
    def from_dataframe(cls, df):
        verify_in_list(exc=ConfigurationError, required_columns=GAZETTEER_COLUMNS,
                       gazetteer_columns=list(df.columns))
        df = df.fillna("")
        verify_in_list(exc=ConfigurationError, gazetteer_levels=list(df["level"]),
                       supported_levels=[level.value for level in GazetteerLevel])
        entries = []
        for row in df.itertuples(index=False):
            aliases = tuple(a.strip() for a in str(row.aliases).split(";") if a.strip())
            entries.append(GazetteerEntry(
                id=str(row.id).strip(), name=str(row.name).strip(), aliases=aliases,
                level=GazetteerLevel(row.level), parent_id=str(row.parent_id).strip() or None,
            ))
        return cls(entries)

    @classmethod
    def load(cls, path):
        """Loads a gazetteer CSV with columns id,name,aliases,level,parent_id
        Args:
            path (str):
                path to the CSV file
        Returns:
            Gazetteer:
                the validated gazetteer
        Raises:
            ConfigurationError:
                if the file is missing or inconsistent
        """
        try:
            validate_paths(path)
        except FileNotFoundError as err:
            raise ConfigurationError(str(err)) from err
        return cls.from_dataframe(pd.read_csv(path, dtype=str, keep_default_na=False))

    def _validate(self):
        for entry in self.entries.values():
            if not entry.name:
                raise ConfigurationError("Gazetteer entry {} has no name".format(entry.id))
            if entry.parent_id is not None and entry.parent_id not in self.entries:
                raise ConfigurationError("Gazetteer entry {} has unknown parent {}".format(
                    entry.id, entry.parent_id))
            if entry.level in SETTLEMENT_LEVELS:
                parent = self.entries.get(entry.parent_id)
                if parent is None or parent.level not in (GazetteerLevel.BLOCK,
                                                          GazetteerLevel.DISTRICT):
                    raise ConfigurationError(
                        "{} {} must have a Block or District parent".format(
                            entry.level.value, entry.id))
        for entry_id in self.entries:
            seen = set()
            current = entry_id
            while current is not None:
                if current in seen:
                    raise ConfigurationError(
                        "Gazetteer parent chain of {} is cyclic".format(entry_id))
                seen.add(current)
                current = self.entries[current].parent_id

    def ancestors(self, entry_id):
        """Parent chain of an entry, closest parent first"""
        chain = []
        current = self.entries[entry_id].parent_id
        while current is not None:
            chain.append(self.entries[current])
            current = self.entries[current].parent_id
        return chain

    def lookup(self, tokens):
        return self.index.get(tuple(tokens), [])

    def starts_name(self, tokens, position):
        """Whether a gazetteer name or alias starts at tokens[position]"""
        longest = min(self.max_tokens, len(tokens) - position)
        return any(self.lookup(tokens[position:position + length])
                   for length in range(1, longest + 1))

    def location(self, entry_id):
        """LocationDetail of an entry with coarser fields filled from its parents"""
        fields = {"matched_gazetteer_id": entry_id}
        for entry in [self.entries[entry_id]] + self.ancestors(entry_id):
            if entry.level == GazetteerLevel.DISTRICT:
                fields.setdefault("district", entry.name)
            elif entry.level == GazetteerLevel.BLOCK:
                fields.setdefault("block", entry.name)
            else:
                fields.setdefault("settlement", entry.name)
        return LocationDetail(**fields)


@functools.lru_cache(maxsize=1)
def default_abbreviations():
    return dict(toml.load(DEFAULT_PARAMS_PATH)["address"]["abbreviations"])


def standardize_address(raw, abbreviations=None):
    """Lowercases, turns punctuation into spaces and expands abbreviations

    Args:
        raw (str):
            raw address text
        abbreviations (dict):
            token -> expansion table, defaults to the packaged table
    Returns:
        str:
            the standardized address
    """
    abbreviations = default_abbreviations() if abbreviations is None else abbreviations
    tokens = _PUNCTUATION.sub(" ", raw.lower()).split()
    return " ".join(abbreviations.get(token, token) for token in tokens)


# marks a comma of the raw address inside the token stream; guardian removal stops there
SEGMENT_BREAK = ","


def address_tokens(raw, abbreviations=None):
    """Standardized tokens of an address with a SEGMENT_BREAK token at every comma"""
    tokens = []
    for segment in raw.split(","):
        words = standardize_address(segment, abbreviations).split()
        if words and tokens:
            tokens.append(SEGMENT_BREAK)
        tokens.extend(words)
    return tokens


def _strip_guardian_tokens(tokens, gazetteer=None):
    kept, removed = [], []
    i = 0
    while i < len(tokens):
        at_name = gazetteer is not None and gazetteer.starts_name(tokens, i)
        if at_name or tuple(tokens[i:i + 2]) not in RELATION_PHRASES:
            kept.append(tokens[i])
            i += 1
            continue
        j = i + 2
        while j < len(tokens):
            token = tokens[j]
            if token == SEGMENT_BREAK or token in LOCATION_KEYWORDS or token.isdigit():
                break
            if gazetteer is not None and gazetteer.starts_name(tokens, j):
                break
            j += 1
        removed.extend(tokens[i:j])
        i = j
    return [token for token in kept if token != SEGMENT_BREAK], removed


def strip_guardian_text(addr, gazetteer=None):
    """Removes relation phrases such as 's o' or 'care of' and the names that follow

    Removal stops at a comma, a gazetteer name, a location keyword or a number, so place
    names are never deleted.

    Args:
        addr (str):
            standardized address, commas may be kept as separate tokens
        gazetteer (Gazetteer):
            optional gazetteer whose names end a removal
    Returns:
        str:
            the address without guardian text or commas
    """
    tokens = addr.replace(",", " {} ".format(SEGMENT_BREAK)).split()
    kept, _ = _strip_guardian_tokens(tokens, gazetteer)
    return " ".join(kept)


def gazetteer_match(addr, gazetteer):
    """Matches an address against the gazetteer by longest exact token sequences

    The most specific level among the hits wins. Ties between same-level entries are
    broken by how many of their ancestors were also named in the address.

    Args:
        addr (str):
            standardized, guardian-stripped address
        gazetteer (Gazetteer):
            the loaded gazetteer
    Returns:
        LocationDetail:
            the location, None if nothing matched or the match is ambiguous
        list[str]:
            ids of the tied entries when the match is ambiguous, else empty
    Raises:
        ConfigurationError:
            if no gazetteer is loaded
    """
    if gazetteer is None:
        raise ConfigurationError("No gazetteer is loaded")
    tokens = addr.split()
    hit_ids = []
    i = 0
    while i < len(tokens):
        for length in range(min(gazetteer.max_tokens, len(tokens) - i), 0, -1):
            ids = gazetteer.lookup(tokens[i:i + length])
            if ids:
                hit_ids.extend(e for e in ids if e not in hit_ids)
                i += length
                break
        else:
            i += 1
    if not hit_ids:
        return None, []

    best_rank = max(LEVEL_RANK[gazetteer.entries[e].level] for e in hit_ids)
    top = [e for e in hit_ids if LEVEL_RANK[gazetteer.entries[e].level] == best_rank]
    if len(top) > 1:
        others = set(hit_ids) - set(top)
        scores = {e: sum(a.id in others for a in gazetteer.ancestors(e)) for e in top}
        best_score = max(scores.values())
        top = [e for e in top if scores[e] == best_score]
    if len(top) > 1:
        return None, sorted(top)
    return gazetteer.location(top[0]), []


def clean_address_cell(raw, gazetteer, abbreviations=None, row_index=0, column=None):
    """Standardizes, strips and matches one address cell
    Returns:
        CellVerdict:
            the verdict
        LocationDetail:
            the location, None when not resolved
    """
    if not raw.strip():
        return CellVerdict(row_index, column, Phase.SCREENED, "", Action.MISSING, raw), None
    kept, removed = _strip_guardian_tokens(address_tokens(raw, abbreviations), gazetteer)
    note = "removed '{}'".format(" ".join(removed)) if removed else ""
    if removed and not kept:
        return CellVerdict(row_index, column, Phase.DIAGNOSED, "L04", Action.REVIEW_QUEUED,
                           raw, note=note), None

    location, tied = gazetteer_match(" ".join(kept), gazetteer)
    if tied:
        candidates = tuple(gazetteer.location(e).describe() for e in tied)
        return CellVerdict(row_index, column, Phase.DIAGNOSED, "L05", Action.REVIEW_QUEUED,
                           raw, candidates=candidates, note=note), None
    if location is None:
        return CellVerdict(row_index, column, Phase.DIAGNOSED, "L03", Action.REVIEW_QUEUED,
                           raw, note=note), None

    after = location.describe()
    rule_id = "L02" if removed else "L01"
    if after == raw:
        return CellVerdict(row_index, column, Phase.SCREENED, rule_id, Action.UNCHANGED, raw,
                           after), location
    return CellVerdict(row_index, column, Phase.EDITED, rule_id, Action.AUTO_CORRECTED, raw,
                       after, note=note), location


class GeocodeCache:
    """Query string -> (latitude, longitude), safe to share between threads"""

    def __init__(self, entries=None, path=None):
        self._lock = threading.Lock()
        self._entries = {key: tuple(value) for key, value in (entries or {}).items()}
        self.path = path

    @classmethod
    def load(cls, path):
        """Loads a cache file, or starts an empty cache bound to path if it does not exist"""
        if path and os.path.exists(path):
            with open(path, "r", encoding="utf-8") as f:
                return cls(json.load(f), path)
        return cls(path=path)

    def get(self, query):
        with self._lock:
            return self._entries.get(query)

    def put(self, query, coordinates):
        with self._lock:
            self._entries[query] = tuple(coordinates)

    def clear(self):
        with self._lock:
            self._entries.clear()

    def items(self):
        with self._lock:
            return sorted(self._entries.items())

    def __contains__(self, query):
        with self._lock:
            return query in self._entries

    def __len__(self):
        with self._lock:
            return len(self._entries)

    def save(self, path=None):
        path = path or self.path
        if not path:
            raise ValueError("The geocode cache has no file to save to")
        with self._lock:
            data = {key: list(value) for key, value in sorted(self._entries.items())}
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2)


class OfflineGeocoder:
    """Deterministic geocoder backed by a JSON table of query -> [lat, lon]"""

    def __init__(self, table):
        self.table = {key.lower(): tuple(value) for key, value in table.items()}

    @classmethod
    def from_json(cls, path):
        try:
            validate_paths(path)
        except FileNotFoundError as err:
            raise ConfigurationError(str(err)) from err
        with open(path, "r", encoding="utf-8") as f:
            return cls(json.load(f))

    def lookup(self, query):
        return self.table.get(query)


class HttpGeocoder:
    """Geocoder over HTTP GET returning JSON {lat, lon}

    Requests pass through one dispatcher lock that keeps min_interval seconds between
    calls, whichever thread issues them.
    """

    def __init__(self, endpoint, api_key=None, timeout=10.0, min_interval=0.1, session=None):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.min_interval = min_interval
        self.session = session or requests.Session()
        self._dispatch_lock = threading.Lock()
        self._last_request = 0.0

    @classmethod
    def from_params(cls, geocoder_params):
        endpoint = os.environ.get(geocoder_params["endpoint_env"])
        if not endpoint:
            raise ConfigurationError("Set {} to use the HTTP geocoder".format(
                geocoder_params["endpoint_env"]))
        return cls(endpoint, os.environ.get(geocoder_params["key_env"]),
                   timeout=geocoder_params["timeout"],
                   min_interval=geocoder_params["min_interval"])

    def _get(self, query):
        with self._dispatch_lock:
            wait = self._last_request + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            params = {"q": query}
            if self.api_key:
                params["key"] = self.api_key
            try:
                return self.session.get(self.endpoint, params=params, timeout=self.timeout)
            finally:
                self._last_request = time.monotonic()

    def lookup(self, query):
        """Geocodes one query string
        Returns:
            tuple[float, float]:
                (latitude, longitude), None if the response was malformed
        Raises:
            GeocodingError:
                on timeouts, quota refusals and unavailable service
        """
        try:
            response = self._get(query)
        except requests.exceptions.Timeout as err:
            raise GeocodingError("Geocoder timed out", retry_after=self.timeout) from err
        except requests.exceptions.RequestException as err:
            raise GeocodingError("Geocoder unavailable: {}".format(err)) from err

        if response.status_code == 429:
            retry_after = response.headers.get("Retry-After", "")
            raise GeocodingError(
                "Geocoder quota exceeded",
                retry_after=float(retry_after) if retry_after.isdigit() else None)
        if response.status_code >= 400:
            raise GeocodingError("Geocoder returned HTTP {}".format(response.status_code))
        try:
            data = response.json()
            coordinates = (float(data["lat"]), float(data["lon"]))
        except (ValueError, KeyError, TypeError):
            logger.error("Malformed geocoder response for a query of %d characters",
                         len(query))
            return None
        if not (-90 <= coordinates[0] <= 90 and -180 <= coordinates[1] <= 180):
            logger.error("Geocoder returned out of range coordinates %s", coordinates)
            return None
        return coordinates


def geocode(location, client=None, cache=None):
    """Adds coordinates to a location, querying the client only on cache misses

    Args:
        location (LocationDetail):
            location with at least one name field
        client (OfflineGeocoder | HttpGeocoder):
            geocoder, None to use the cache alone
        cache (GeocodeCache):
            optional response cache keyed by the standardized query string
    Returns:
        LocationDetail:
            the location with coordinates when they were found
    Raises:
        ValueError:
            if the location has no name field
        GeocodingError:
            if the client times out or is refused
    """
    if location is None or location.is_empty():
        raise ValueError("Geocoding needs a district, block or settlement")
    query = location.query_string()
    if cache is not None:
        cached = cache.get(query)
        if cached is not None:
            return location.with_coordinates(*cached)
    if client is None:
        return location
    coordinates = client.lookup(query)
    if coordinates is None:
        return location
    if cache is not None:
        cache.put(query, coordinates)
    return location.with_coordinates(*coordinates)


def build_geocoder(geocoder_params, offline=None):
    """Creates the configured geocoder, or None when geocoding is disabled
    Args:
        geocoder_params (dict):
            the params 'geocoder' table
        offline (bool):
            overrides geocoder_params['offline']
    """
    if not geocoder_params.get("enabled"):
        return None
    offline = geocoder_params.get("offline", True) if offline is None else offline
    if offline:
        return OfflineGeocoder.from_json(geocoder_params["stub_path"])
    return HttpGeocoder.from_params(geocoder_params)
