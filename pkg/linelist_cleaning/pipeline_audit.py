"""Screen, diagnose and edit orchestration with the review queue and audit reports"""
import dataclasses
import datetime
import json
import logging
from enum import Enum

import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from linelist_cleaning.address_locator import Gazetteer, clean_address_cell, geocode
from linelist_cleaning.anonymizer import REDACTED, AnonConfig, pseudonymize, strip_identifiers
from linelist_cleaning.core_model import (
    DATE_ROLES, IDENTIFIER_ROLES, Action, CellVerdict, CleanRecord, ConfigurationError,
    GeocodingError, Phase, Provenance, Role
)
from linelist_cleaning.date_engine import clean_date_cell
from linelist_cleaning.demographics import (
    AgeValue, SexValue, default_keyword_table, extract_age, extract_demographics, extract_sex,
    format_age, load_keyword_table
)
from linelist_cleaning.imputer import OffsetStats, compute_offsets, impute_test_date
from linelist_cleaning.utils import read_jsonl, validate_paths, write_jsonl

logger = logging.getLogger(__name__)

OUTPUT_COLUMNS = [
    "row_index", "anon_id", "test_date", "date_provenance", "age_years", "sex", "district",
    "block", "settlement", "lat", "lon",
]
COUNTER_BUCKETS = ("screened", "auto", "manual", "deleted", "unchanged", "pending")
IMPUTATION_RULES = ("M01", "M02")
# a plain ddmmyyyy token, or an ISO date, is not an anomaly
ACCEPT_RULES = ("D00", "D22")
# lossy date rules: the cell is deleted, or imputed, and the outcome still goes to review
REVIEW_THEN_DELETE = ("D04", "D21")

_BUCKET_OF_ACTION = {
    Action.AUTO_CORRECTED: "auto",
    Action.MANUALLY_CORRECTED: "manual",
    Action.DELETED: "deleted",
    Action.UNCHANGED: "unchanged",
    Action.MISSING: "unchanged",
    Action.REVIEW_QUEUED: "pending",
}
_RESOLVED_ACTIONS = (Action.AUTO_CORRECTED, Action.MANUALLY_CORRECTED, Action.UNCHANGED)


class Resolution(str, Enum):
    PENDING = "Pending"
    ACCEPTED = "Accepted"
    MANUAL_VALUE = "ManualValue"
    DELETED = "Deleted"


@dataclasses.dataclass
class ReviewItem:
    """A queued cell and the operator's decision on it

    Resolutions move from Pending to a terminal state once; only a failed re-validation
    sends an item back to Pending.
    """
    verdict: CellVerdict
    resolution: Resolution = Resolution.PENDING
    value: str = ""
    note: str = ""

    @property
    def candidates(self):
        return list(self.verdict.candidates)

    @property
    def key(self):
        return self.verdict.key

    def is_terminal(self):
        return self.resolution != Resolution.PENDING

    def resolve(self, resolution, value=""):
        """Records the operator's decision
        Args:
            resolution (Resolution | str):
                a terminal resolution
            value (str):
                the accepted candidate or the typed value; ignored for Deleted
        Raises:
            ValueError:
                if the item is already terminal, the resolution is Pending, the value is
                not one of the candidates or a manual value is blank
        """
        resolution = Resolution(resolution)
        if self.is_terminal():
            raise ValueError("Review item {} is already {}".format(
                self.key, self.resolution.value))
        if resolution == Resolution.PENDING:
            raise ValueError("Pending is not a resolution")
        if resolution == Resolution.ACCEPTED and value not in self.verdict.candidates:
            raise ValueError("'{}' is not a candidate of review item {}".format(value, self.key))
        if resolution == Resolution.MANUAL_VALUE and not value.strip():
            raise ValueError("A manual value cannot be blank")
        self.resolution = resolution
        self.value = "" if resolution == Resolution.DELETED else value
        self.note = ""

    def accept(self, number):
        """Accepts candidate number (1-based)"""
        if not 1 <= number <= len(self.verdict.candidates):
            raise ValueError("Review item {} has no candidate {}".format(self.key, number))
        self.resolve(Resolution.ACCEPTED, self.verdict.candidates[number - 1])

    def reopen(self, note):
        self.resolution = Resolution.PENDING
        self.value = ""
        self.note = note

    def to_dict(self):
        return {
            "verdict": self.verdict.to_dict(),
            "resolution": self.resolution.value,
            "value": self.value,
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(CellVerdict.from_dict(data["verdict"]), Resolution(data["resolution"]),
                   data.get("value", ""), data.get("note", ""))


class AuditLog:
    """Cell verdicts of a batch, one per mapped cell, ordered by row and column"""

    def __init__(self, year=None, verdicts=(), ingest_verdicts=(), n_records=None,
                 offsets=None):
        self.year = year
        self.verdicts = list(verdicts)
        self.ingest_verdicts = list(ingest_verdicts)
        if n_records is None:
            n_records = len({verdict.row_index for verdict in self.verdicts})
        self.n_records = n_records
        self.offsets = offsets
        self._positions = {verdict.key: i for i, verdict in enumerate(self.verdicts)}
        if len(self._positions) != len(self.verdicts):
            raise ValueError("The audit log holds more than one verdict for a cell")

    @property
    def n_quarantined(self):
        return sum(verdict.rule_id == "malformed-row" for verdict in self.ingest_verdicts)

    def get(self, key):
        position = self._positions.get(tuple(key))
        return None if position is None else self.verdicts[position]

    def replace(self, verdict):
        """Swaps the verdict of a cell for a later one"""
        if verdict.key not in self._positions:
            raise KeyError("No verdict for cell {}".format(verdict.key))
        self.verdicts[self._positions[verdict.key]] = verdict

    def pending(self):
        return [verdict for verdict in self.verdicts if verdict.action == Action.REVIEW_QUEUED]

    def rule_counters(self):
        """Per-rule counts; every rule of a verdict's chain is counted once

        For every rule, screened = auto + manual + deleted + unchanged + pending.
        """
        counters = {}
        for verdict in self.verdicts:
            bucket = _BUCKET_OF_ACTION[verdict.action]
            for rule_id in dict.fromkeys(verdict.rule_chain):
                counts = counters.setdefault(rule_id, dict.fromkeys(COUNTER_BUCKETS, 0))
                counts["screened"] += 1
                counts[bucket] += 1
        return {rule_id: counters[rule_id] for rule_id in sorted(counters)}

    def per_variable_summary(self):
        """Extraction counts and percentages for every analysable role"""
        summary = {}
        for verdict in self.verdicts:
            role = verdict.role.role
            if role == Role.OTHER or role in IDENTIFIER_ROLES:
                continue
            counts = summary.setdefault(role.value, {
                "column": verdict.role.source_header, "total": 0, "extracted": 0,
                "imputed": 0, "missing": 0, "review": 0,
            })
            counts["total"] += 1
            if verdict.action in _RESOLVED_ACTIONS and verdict.after:
                imputed = any(rule in IMPUTATION_RULES for rule in verdict.rule_chain)
                counts["imputed" if imputed else "extracted"] += 1
            elif verdict.action in (Action.MISSING, Action.DELETED):
                counts["missing"] += 1
            else:
                counts["review"] += 1
        for counts in summary.values():
            total = counts["total"]
            counts["percent_extracted"] = _percent(counts["extracted"] + counts["imputed"],
                                                   total, 1)
            counts["percent_parsed_only"] = _percent(counts["extracted"], total, 1)
        return summary

    def automation(self):
        """Shares of anomalous date cells handled automatically, queued or deleted"""
        anomalous = [
            verdict for verdict in self.verdicts
            if verdict.role.role in DATE_ROLES and any(
                rule.startswith("D") and rule not in ACCEPT_RULES
                for rule in verdict.rule_chain)
        ]
        counts = {bucket: 0 for bucket in ("auto", "manual", "deleted", "pending")}
        for verdict in anomalous:
            bucket = _BUCKET_OF_ACTION[verdict.action]
            counts[bucket if bucket in counts else "auto"] += 1
        n = len(anomalous)
        return {
            "anomalous": n,
            "auto": counts["auto"],
            "deleted": counts["deleted"],
            "review": counts["pending"],
            "manual": counts["manual"],
            "percent_automated": _percent(counts["auto"] + counts["deleted"], n, 2),
            "percent_review": _percent(counts["pending"], n, 2),
            "percent_manual": _percent(counts["manual"], n, 2),
        }

    def write_jsonl(self, path):
        write_jsonl(path, (verdict.to_dict() for verdict in self.verdicts))

    @classmethod
    def read_jsonl(cls, path, year=None):
        """Rebuilds an audit log from its JSON lines; offsets are not part of the file"""
        return cls(year, [CellVerdict.from_dict(row) for row in read_jsonl(path)])


def _percent(part, total, digits):
    return round(100.0 * part / total, digits) if total else 0.0


def load_keywords(params):
    """Sex keyword table named in params, or the packaged table"""
    path = params.get("keywords_path")
    if not path:
        return default_keyword_table()
    try:
        validate_paths(path)
    except FileNotFoundError as err:
        raise ConfigurationError(str(err)) from err
    with open(path, "r", encoding="utf-8") as f:
        return load_keyword_table(f.read())


def _resolved_date(verdict):
    if verdict.action in _RESOLVED_ACTIONS and verdict.after:
        return datetime.date.fromisoformat(verdict.after)
    return None


class RecordCleaner:
    """Per-record stages; holds only picklable state so worker processes can run it"""

    def __init__(self, params, ctx, anon_cfg, gazetteer, keywords, abbreviations):
        self.params = params
        self.ctx = ctx
        self.anon_cfg = anon_cfg
        self.gazetteer = gazetteer
        self.keywords = keywords
        self.abbreviations = abbreviations
        self.memo = {}

    def clean(self, record):
        """Cleans one row
        Args:
            record (RawRecord):
                the ingested row
        Returns:
            CleanRecord:
                the row's analysable values
            list[CellVerdict]:
                one verdict per mapped non-Other cell, in source column order
        """
        # the pseudonym needs the identifiers, everything after runs on the stripped row
        anon_id = pseudonymize(record, self.anon_cfg, self.ctx.year, self.memo)
        stripped, verdicts = strip_identifiers(record)
        clean = CleanRecord(record.row_index, anon_id=anon_id)
        verdicts += self.clean_dates(stripped, clean)
        verdicts += self.clean_demographics(stripped, clean)
        verdicts += self.clean_address(stripped, clean)

        order = {column: i for i, column in enumerate(record.cells)}
        verdicts.sort(key=lambda verdict: order[verdict.role])
        return clean, verdicts

    def clean_dates(self, record, clean):
        verdicts = []
        for column, raw in record.cells.items():
            if column.role not in DATE_ROLES:
                continue
            verdict = clean_date_cell(raw, self.ctx, record.row_index, column,
                                      self.params["max_transforms"])
            day = _resolved_date(verdict)
            if day is not None:
                if column.role == Role.TEST_DATE:
                    clean.test_date = day
                    clean.test_date_provenance = Provenance.PARSED
                else:
                    clean.dates[column.role] = day
            verdicts.append(verdict)
        return verdicts

    def clean_demographics(self, record, clean):
        results = extract_demographics(record, self.keywords)
        if "age" in results and results["age"][1] is not None:
            clean.age_years = results["age"][1].years
            clean.age_unit = results["age"][1].unit_seen.value
        if "sex" in results and results["sex"][1] is not None:
            clean.sex = results["sex"][1].category
        return [verdict for verdict, _ in results.values()]

    def clean_address(self, record, clean):
        column = record.column(Role.ADDRESS)
        if column is None:
            return []
        verdict, location = clean_address_cell(record.cells[column], self.gazetteer,
                                               self.abbreviations, record.row_index, column)
        clean.location = location
        return [verdict]


def _clean_chunk(cleaner, records):
    return [cleaner.clean(record) for record in records]


class LineListCleaner:
    """Runs every cleaning stage over a batch and applies review decisions

    Configuration problems surface in the constructor, before any record is touched.
    """

    def __init__(self, params, ctx, anon_cfg=None, gazetteer=None, keywords=None,
                 geocoder=None, cache=None):
        """
        Args:
            params (dict):
                params as returned by load_params
            ctx (YearContext):
                surveillance year of the batch
            anon_cfg (AnonConfig):
                anonymization config, read from params and the environment when absent
            gazetteer (Gazetteer):
                gazetteer, loaded from params['gazetteer_path'] when absent
            keywords (dict):
                sex keyword table, loaded from params['keywords_path'] when absent
            geocoder (OfflineGeocoder | HttpGeocoder):
                optional geocoder
            cache (GeocodeCache):
                optional geocode cache
        """
        self.params = params
        self.ctx = ctx
        self.anon_cfg = anon_cfg or AnonConfig.from_params(params["anonymizer"])
        self.gazetteer = gazetteer or Gazetteer.load(params["gazetteer_path"])
        self.keywords = keywords if keywords is not None else load_keywords(params)
        self.abbreviations = params["address"]["abbreviations"]
        self.geocoder = geocoder
        self.cache = cache
        self.record_cleaner = RecordCleaner(params, ctx, self.anon_cfg, self.gazetteer,
                                            self.keywords, self.abbreviations)

    def clean_records(self, records):
        """Per-record stages, in parallel chunks when params['workers'] > 1"""
        workers = self.params["workers"]
        progress = self.params.get("progress", True)
        chunk_size = self.params.get("chunk_size", 2000)
        if workers > 1 and len(records) > chunk_size:
            chunks = [records[i:i + chunk_size] for i in range(0, len(records), chunk_size)]
            results = Parallel(n_jobs=workers)(
                delayed(_clean_chunk)(self.record_cleaner, chunk)
                for chunk in tqdm(chunks, disable=not progress, desc="Cleaning chunks"))
            return [result for chunk in results for result in chunk]
        return [self.record_cleaner.clean(record)
                for record in tqdm(records, disable=not progress, desc="Cleaning rows")]

    def geocode_batch(self, records, audit):
        """Adds coordinates to matched locations

        After the first timeout or refusal the client is not called again; locations
        the cache cannot serve then go to review with the retry hint.
        """
        if self.geocoder is None and self.cache is None:
            return
        address_keys = {verdict.row_index: verdict.key for verdict in audit.verdicts
                        if verdict.role.role == Role.ADDRESS}
        failure = None
        for clean in records:
            if clean.location is None:
                continue
            client = self.geocoder if failure is None else None
            try:
                clean.location = geocode(clean.location, client, self.cache)
            except GeocodingError as err:
                failure = err
                logger.warning("Geocoding stopped: %s", err)
            if failure is not None and clean.location.latitude is None:
                verdict = audit.get(address_keys[clean.row_index])
                audit.replace(_geocoding_review(verdict, clean.location, failure))
                # a queued address keeps no location until review accepts the candidate
                clean.location = None

    def impute(self, records, audit, stats):
        """Imputes missing or deleted test dates; queued dates are left to review"""
        by_row = {clean.row_index: clean for clean in records}
        for verdict in list(audit.verdicts):
            if verdict.role.role != Role.TEST_DATE:
                continue
            if verdict.action not in (Action.MISSING, Action.DELETED):
                continue
            clean = by_row[verdict.row_index]
            imputed = impute_test_date(clean, stats, self.ctx, verdict.role, verdict.before)
            if imputed.action == Action.MISSING:
                continue
            rule_id = ">".join(verdict.rule_chain + imputed.rule_chain)
            audit.replace(dataclasses.replace(imputed, rule_id=rule_id))
            if imputed.action == Action.AUTO_CORRECTED:
                clean.test_date = datetime.date.fromisoformat(imputed.after)
                clean.test_date_provenance = Provenance.IMPUTED

    def run(self, records, ingest_verdicts=()):
        """Cleans a batch
        Args:
            records (list[RawRecord]):
                ingested rows
            ingest_verdicts (list[CellVerdict]):
                quarantine and encoding verdicts from ingest
        Returns:
            list[CleanRecord]:
                cleaned rows in input order
            AuditLog:
                the batch audit log
            list[ReviewItem]:
                review items, all pending
        """
        results = self.clean_records(records)
        cleaned = [clean for clean, _ in results]
        audit = AuditLog(
            self.ctx.year, [verdict for _, verdicts in results for verdict in verdicts],
            [_redact(verdict) for verdict in ingest_verdicts], n_records=len(records))

        self.geocode_batch(cleaned, audit)
        stats = compute_offsets(cleaned, self.ctx.year)
        audit.offsets = stats
        if self.params["impute"]:
            self.impute(cleaned, audit, stats)
        for clean in cleaned:
            clean.validate()

        items = [ReviewItem(verdict) for verdict in audit.verdicts if needs_review(verdict)]
        logger.info("Cleaned %d rows: %d verdicts, %d review items", len(cleaned),
                    len(audit.verdicts), len(items))
        return cleaned, audit, items

    def apply_resolutions(self, items, records, audit):
        """Applies terminal review decisions after re-validating them

        Pending items are skipped. A value that fails re-validation reopens its item
        with the reason in its note.

        Args:
            items (list[ReviewItem]):
                review items, usually from the sidecar
            records (list[CleanRecord]):
                cleaned rows, updated in place
            audit (AuditLog):
                audit log, verdicts replaced in place
        Returns:
            list[CellVerdict]:
                the verdicts that were applied
        """
        by_row = {clean.row_index: clean for clean in records}
        applied = []
        for item in items:
            if not item.is_terminal():
                continue
            original = item.verdict
            if audit.get(item.key) != original or original.row_index not in by_row:
                logger.warning("Review item %s does not match this batch, skipped", item.key)
                continue
            clean = by_row[original.row_index]
            if item.resolution == Resolution.DELETED and original.action != Action.REVIEW_QUEUED:
                # the lossy cell was already deleted, or imputed, by the cleaning run
                verdict = dataclasses.replace(
                    original, note=_join_notes(original.note, "deletion confirmed in review"))
            elif item.resolution == Resolution.DELETED:
                _clear_field(clean, original.role.role)
                verdict = CellVerdict(original.row_index, original.role, Phase.EDITED,
                                      original.rule_id, Action.DELETED, original.before,
                                      note="deleted in review")
            else:
                try:
                    after = self.revalidate(clean, original, item.value)
                except ValueError as err:
                    item.reopen(str(err))
                    logger.info("Review item %s reopened: %s", item.key, err)
                    continue
                rule_id = original.rule_id
                if original.action != Action.REVIEW_QUEUED:
                    rule_id = ">".join(rule for rule in original.rule_chain
                                       if rule not in IMPUTATION_RULES)
                verdict = CellVerdict(original.row_index, original.role, Phase.EDITED,
                                      rule_id, Action.MANUALLY_CORRECTED,
                                      original.before, after,
                                      note="{} in review".format(item.resolution.value))
            audit.replace(verdict)
            applied.append(verdict)
        for clean in records:
            clean.validate()
        return applied

    def revalidate(self, clean, verdict, value):
        """Runs a reviewed value through the parser of its column and stores it"""
        return revalidate(clean, verdict, value, self.ctx, self.params, self.gazetteer,
                          self.keywords, self.geocoder, self.cache)


def revalidate(clean, verdict, value, ctx, params, gazetteer, keywords, geocoder=None,
               cache=None):
    """Runs a reviewed value through the parser of its column and stores it

    Args:
        clean (CleanRecord):
            row to store the value on
        verdict (CellVerdict):
            the queued verdict
        value (str):
            accepted candidate or typed value
        ctx (YearContext):
            surveillance year
        params (dict):
            params as returned by load_params
        gazetteer (Gazetteer):
            gazetteer for addresses
        keywords (dict):
            sex keyword table
        geocoder, cache:
            optional geocoding resources for addresses
    Returns:
        str:
            the canonical value
    Raises:
        ValueError:
            if the value does not parse
    """
    role = verdict.role.role
    if role in DATE_ROLES:
        checked = clean_date_cell(value, ctx, verdict.row_index, verdict.role,
                                  params["max_transforms"])
        day = _resolved_date(checked)
        if day is None:
            raise ValueError("'{}' is not a valid date for {} ({})".format(
                value, ctx.year, checked.rule_id or checked.action.value))
        if role == Role.TEST_DATE:
            # typed values over an imputed date are parsed; queued imputations stay imputed
            imputed = verdict.action == Action.REVIEW_QUEUED and any(
                rule in IMPUTATION_RULES for rule in verdict.rule_chain)
            clean.test_date = day
            clean.test_date_provenance = Provenance.IMPUTED if imputed else Provenance.PARSED
        else:
            clean.dates[role] = day
        return day.isoformat()
    if role == Role.AGE:
        age = extract_age(value)
        if not isinstance(age, AgeValue):
            raise ValueError("'{}' is not an age between 0 and 120 years".format(value))
        clean.age_years = age.years
        clean.age_unit = age.unit_seen.value
        return format_age(age.years)
    if role == Role.SEX:
        sex = extract_sex(value, keywords)
        if not isinstance(sex, SexValue):
            raise ValueError("'{}' does not name a sex category".format(value))
        clean.sex = sex.category
        return sex.category.value
    if role == Role.ADDRESS:
        checked, location = clean_address_cell(
            value, gazetteer, params["address"]["abbreviations"], verdict.row_index, verdict.role)
        if location is None:
            raise ValueError("'{}' does not match the gazetteer ({})".format(
                value, checked.rule_id or checked.action.value))
        try:
            location = geocode(location, geocoder, cache)
        except GeocodingError as err:
            logger.warning("Reviewed address kept without coordinates: %s", err)
        clean.location = location
        return location.describe()
    raise ValueError("Column '{}' has no reviewable values".format(
        verdict.role.source_header))


def _clear_field(clean, role):
    if role == Role.TEST_DATE:
        clean.test_date = None
        clean.test_date_provenance = Provenance.MISSING
    elif role in DATE_ROLES:
        clean.dates.pop(role, None)
    elif role == Role.AGE:
        clean.age_years = None
        clean.age_unit = ""
    elif role == Role.SEX:
        clean.sex = None
    elif role == Role.ADDRESS:
        clean.location = None


def needs_review(verdict):
    """Whether a verdict goes to the review queue

    Queued cells do, and so do date cells a lossy rule deleted; their deletion, or the
    imputation that replaced it, stands until the operator decides.
    """
    if verdict.action == Action.REVIEW_QUEUED:
        return True
    return verdict.role.role in DATE_ROLES and any(
        rule in REVIEW_THEN_DELETE for rule in verdict.rule_chain)


def _join_notes(*notes):
    return "; ".join(note for note in notes if note)


def _geocoding_review(verdict, location, err):
    retry = "" if err.retry_after is None else ", retry after {:g} s".format(err.retry_after)
    return CellVerdict(
        verdict.row_index, verdict.role, Phase.DIAGNOSED, ">".join(verdict.rule_chain + ["L06"]),
        Action.REVIEW_QUEUED, verdict.before, candidates=(location.describe(),),
        note="geocoder unavailable: {}{}".format(err, retry),
    )


def _redact(verdict):
    # malformed rows arrive from ingest with their identifier fields already blanked
    if verdict.role.role in IDENTIFIER_ROLES:
        return dataclasses.replace(verdict, before=REDACTED)
    return verdict


def run_pipeline(records, ctx, params, ingest_verdicts=(), **resources):
    """Cleans a batch; see LineListCleaner for the resources that can be passed in
    Returns:
        list[CleanRecord], AuditLog, list[ReviewItem]
    """
    return LineListCleaner(params, ctx, **resources).run(records, ingest_verdicts)


def apply_resolutions(items, records, audit, cleaner):
    """Applies terminal review decisions with the parsers of cleaner"""
    return cleaner.apply_resolutions(items, records, audit)


def write_review_items(path, items):
    write_jsonl(path, (item.to_dict() for item in items))


def append_resolution(path, item):
    """Appends one decision to the sidecar; later lines win when it is read back"""
    write_jsonl(path, [item.to_dict()], mode="a")


def load_review_items(path):
    """Reads a sidecar, keeping the last line per cell
    Returns:
        list[ReviewItem]:
            one item per cell, in order of first appearance
    """
    items = {}
    for row in read_jsonl(path):
        item = ReviewItem.from_dict(row)
        items[item.key] = item
    return list(items.values())


def attach_resolutions(items, resolved):
    """Copies terminal decisions onto the matching items of a fresh run
    Args:
        items (list[ReviewItem]):
            pending items of the fresh run
        resolved (list[ReviewItem]):
            items read from a sidecar
    Returns:
        int:
            number of decisions attached
    """
    by_key = {item.key: item for item in resolved if item.is_terminal()}
    attached = 0
    for item in items:
        decision = by_key.get(item.key)
        if decision is None or decision.verdict != item.verdict:
            continue
        item.resolution = decision.resolution
        item.value = decision.value
        item.note = decision.note
        attached += 1
    return attached


def _format_coordinate(value):
    return "" if value is None else "{:.6f}".format(value)


def clean_records_df(records):
    """Cleaned rows as a DataFrame of strings in the output column order"""
    rows = []
    for clean in records:
        location = clean.location
        rows.append({
            "row_index": str(clean.row_index),
            "anon_id": clean.anon_id,
            "test_date": clean.test_date.isoformat() if clean.test_date else "",
            "date_provenance": clean.test_date_provenance.value,
            "age_years": "" if clean.age_years is None else format_age(clean.age_years),
            "sex": clean.sex.value if clean.sex else "",
            "district": (location and location.district) or "",
            "block": (location and location.block) or "",
            "settlement": (location and location.settlement) or "",
            "lat": _format_coordinate(location and location.latitude),
            "lon": _format_coordinate(location and location.longitude),
        })
    return pd.DataFrame(rows, columns=OUTPUT_COLUMNS, dtype=str)


def write_clean_csv(path, records):
    clean_records_df(records).to_csv(path, index=False)


def summarize(audit):
    """Builds the report document of a batch
    Args:
        audit (AuditLog):
            audit log after cleaning and review
    Returns:
        dict:
            year, counts, per-variable extraction, rule counters, automation shares and
            offsets, ready for json.dump
    """
    offsets = audit.offsets.to_dict() if isinstance(audit.offsets, OffsetStats) else None
    return {
        "year": audit.year,
        "n_records": audit.n_records,
        "n_quarantined": audit.n_quarantined,
        "variables": audit.per_variable_summary(),
        "rules": audit.rule_counters(),
        "automation": audit.automation(),
        "offsets": offsets,
    }


def write_summary(summary, json_path=None, text_path=None):
    if json_path:
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump(summary, f, indent=2)
    if text_path:
        with open(text_path, "w", encoding="utf-8") as f:
            f.write(render_summary_text(summary))


def render_summary_text(summary):
    """Aligned text rendering of a summary document"""
    lines = ["Year: {}".format(summary["year"] if summary["year"] is not None else "-"),
             "Records: {}  Quarantined: {}".format(summary["n_records"],
                                                  summary["n_quarantined"]),
             ""]
    variables = pd.DataFrame.from_dict(summary["variables"], orient="index")
    lines += ["Extraction by variable",
              variables.to_string() if not variables.empty else "(none)", ""]
    rules = pd.DataFrame.from_dict(summary["rules"], orient="index")
    lines += ["Rule counters", rules.to_string() if not rules.empty else "(none)", ""]
    automation = summary["automation"]
    lines.append("Anomalous date cells: {anomalous}  automated: {percent_automated}%  "
                 "review: {percent_review}%  manual: {percent_manual}%".format(**automation))
    offsets = summary.get("offsets")
    if offsets:
        lines.append("Mean days admission to test: {}  test to discharge: {}".format(
            _format_mean(offsets["mean_admission_to_test"]),
            _format_mean(offsets["mean_test_to_discharge"])))
    return "\n".join(lines) + "\n"


def _format_mean(value):
    return "-" if value is None else "{:.2f}".format(value)
