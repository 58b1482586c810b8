"""Shared domain types, column-role mapping, ingest and parameter loading"""
import copy
import csv
import datetime
import io
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple

import toml

from linelist_cleaning.utils import (
    parse_key_value_lines, resolve_path, validate_paths, verify_in_list
)

logger = logging.getLogger(__name__)

PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))
DEFAULT_PARAMS_PATH = os.path.join(PACKAGE_DIR, "configs", "params.toml")

EXCEL_EPOCH = datetime.date(1899, 12, 30)


class ConfigurationError(ValueError):
    """Raised for invalid mappings, params or reference data, before any record runs"""


class CalendarError(ValueError):
    """Raised when a ddmmyyyy token is not a real calendar date"""


class SerialRangeError(ValueError):
    """Raised for spreadsheet serials below the supported floor"""


class TokenContractError(ValueError):
    """Raised when a non-standardized token reaches the rule cascade"""


class GeocodingError(ValueError):
    """Raised when the geocoding service times out or refuses a request"""

    def __init__(self, message, retry_after=None):
        super().__init__(message)
        self.retry_after = retry_after


class Role(str, Enum):
    TEST_DATE = "TestDate"
    REPORT_DATE = "ReportDate"
    OPD_DATE = "OpdDate"
    ADMISSION_DATE = "AdmissionDate"
    DISCHARGE_DATE = "DischargeDate"
    AGE = "Age"
    SEX = "Sex"
    ADDRESS = "Address"
    NAME = "Name"
    CONTACT = "Contact"
    OTHER = "Other"


DATE_ROLES = (
    Role.TEST_DATE, Role.REPORT_DATE, Role.OPD_DATE, Role.ADMISSION_DATE, Role.DISCHARGE_DATE
)
IMPUTATION_ROLES = (Role.TEST_DATE, Role.OPD_DATE, Role.ADMISSION_DATE, Role.DISCHARGE_DATE)
MANDATORY_ROLES = (Role.AGE, Role.SEX, Role.ADDRESS)
IDENTIFIER_ROLES = (Role.NAME, Role.CONTACT)


class Phase(str, Enum):
    SCREENED = "Screened"
    DIAGNOSED = "Diagnosed"
    EDITED = "Edited"


class Action(str, Enum):
    AUTO_CORRECTED = "AutoCorrected"
    REVIEW_QUEUED = "ReviewQueued"
    MANUALLY_CORRECTED = "ManuallyCorrected"
    DELETED = "Deleted"
    UNCHANGED = "Unchanged"
    MISSING = "Missing"


class Sex(str, Enum):
    MALE = "Male"
    FEMALE = "Female"
    TRANSGENDER = "Transgender"


class Provenance(str, Enum):
    PARSED = "Parsed"
    IMPUTED = "Imputed"
    MISSING = "Missing"


@dataclass(frozen=True)
class ColumnRole:
    role: Role
    source_header: str

    def to_dict(self):
        return {"role": self.role.value, "source_header": self.source_header}

    @classmethod
    def from_dict(cls, data):
        return cls(Role(data["role"]), data["source_header"])


# record-level verdicts (quarantine) are attached to this pseudo column
ROW_COLUMN = ColumnRole(Role.OTHER, "<row>")


@dataclass(frozen=True)
class RawRecord:
    """One ingested line-list row, cells untouched"""
    row_index: int
    cells: Mapping[ColumnRole, str]
    source_file: str = ""

    def columns(self, role):
        """Returns the columns mapped to role, in source order"""
        return [column for column in self.cells if column.role == role]

    def column(self, role):
        """Returns the single column mapped to role or None"""
        columns = self.columns(role)
        return columns[0] if columns else None

    def value(self, role):
        """Returns the raw text of the cell mapped to role, '' if unmapped"""
        column = self.column(role)
        return self.cells[column] if column is not None else ""

    def replace_cells(self, updates):
        """Returns a copy with some cells replaced"""
        cells = dict(self.cells)
        cells.update(updates)
        return RawRecord(self.row_index, cells, self.source_file)


@dataclass(frozen=True)
class YearContext:
    """The surveillance year that governs year-sensitive rules"""
    year: int
    plausibility_window_days: int = 31

    def __post_init__(self):
        if not 1990 <= self.year <= 2100:
            raise ConfigurationError(
                "The surveillance year {} is outside [1990, 2100]".format(self.year))
        if self.plausibility_window_days < 0:
            raise ConfigurationError("plausibility_window_days must be non-negative")

    @property
    def serial_min(self):
        return (datetime.date(self.year, 1, 1) - EXCEL_EPOCH).days

    @property
    def serial_max(self):
        return (datetime.date(self.year, 12, 31) - EXCEL_EPOCH).days

    @property
    def yyyy(self):
        return "{:04d}".format(self.year)

    @property
    def yy(self):
        return self.yyyy[-2:]

    @property
    def window_start(self):
        return datetime.date(self.year, 1, 1) - datetime.timedelta(
            days=self.plausibility_window_days)

    @property
    def window_end(self):
        return datetime.date(self.year, 12, 31) + datetime.timedelta(
            days=self.plausibility_window_days)

    def is_plausible(self, day):
        return self.window_start <= day <= self.window_end


@dataclass(frozen=True)
class CellVerdict:
    """Outcome of screen/diagnose/edit for one cell"""
    row_index: int
    role: ColumnRole
    phase: Phase
    rule_id: str
    action: Action
    before: str
    after: str = ""
    candidates: Tuple[str, ...] = ()
    note: str = ""

    def __post_init__(self):
        if self.action == Action.AUTO_CORRECTED and (not self.after or self.after == self.before):
            raise ValueError(
                "AutoCorrected verdict for row {} needs a changed, non-empty value".format(
                    self.row_index))
        if self.action == Action.DELETED and self.after:
            raise ValueError("Deleted verdict for row {} must not carry a value".format(
                self.row_index))
        if not self.rule_id and self.action not in (Action.UNCHANGED, Action.MISSING):
            raise ValueError("Verdict for row {} with action {} needs a rule id".format(
                self.row_index, self.action.value))

    @property
    def rule_chain(self):
        return [rule for rule in self.rule_id.split(">") if rule]

    @property
    def key(self):
        return (self.row_index, self.role.source_header)

    def to_dict(self):
        return {
            "row_index": self.row_index,
            "role": self.role.to_dict(),
            "phase": self.phase.value,
            "rule_id": self.rule_id,
            "action": self.action.value,
            "before": self.before,
            "after": self.after,
            "candidates": list(self.candidates),
            "note": self.note,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            row_index=int(data["row_index"]),
            role=ColumnRole.from_dict(data["role"]),
            phase=Phase(data["phase"]),
            rule_id=data["rule_id"],
            action=Action(data["action"]),
            before=data["before"],
            after=data.get("after", ""),
            candidates=tuple(data.get("candidates", ())),
            note=data.get("note", ""),
        )


@dataclass
class CleanRecord:
    """Canonical output row"""
    row_index: int
    test_date: Optional[datetime.date] = None
    test_date_provenance: Provenance = Provenance.MISSING
    age_years: Optional[float] = None
    sex: Optional[Sex] = None
    location: Optional["LocationDetail"] = None  # noqa: F821
    anon_id: str = ""
    dates: Dict[Role, datetime.date] = field(default_factory=dict)
    age_unit: str = ""

    def validate(self):
        """Checks the output invariants
        Raises:
            ValueError:
                if age is out of range, the provenance disagrees with the date or the
                pseudonym is empty
        """
        if self.age_years is not None and not 0 <= self.age_years <= 120:
            raise ValueError("Age {} of row {} is outside [0, 120]".format(
                self.age_years, self.row_index))
        if (self.test_date is None) != (self.test_date_provenance == Provenance.MISSING):
            raise ValueError("Test date provenance of row {} disagrees with its value".format(
                self.row_index))
        if not self.anon_id:
            raise ValueError("Row {} has no pseudonymous id".format(self.row_index))

    def resolved_fields(self):
        """Number of analysable fields present"""
        return sum(value is not None for value in (
            self.test_date, self.age_years, self.sex, self.location))


def load_column_mapping(config_text, headers=None, imputation_requested=False):
    """Parses and validates a `role = header` column mapping

    Args:
        config_text (str):
            mapping file contents
        headers (list[str]):
            source headers; when given, unmapped headers are returned as Other roles
        imputation_requested (bool):
            whether test-date imputation will run, which needs a date donor role
    Returns:
        list[ColumnRole]:
            the validated mapping
    Raises:
        ConfigurationError:
            for unknown roles, duplicate role or header assignments and missing
            mandatory roles
    """
    try:
        pairs = parse_key_value_lines(config_text)
    except ValueError as err:
        raise ConfigurationError(str(err)) from err

    verify_in_list(
        exc=ConfigurationError,
        mapped_roles=[key for key, _, _ in pairs],
        column_roles=[role.value for role in Role],
    )

    mapping = []
    role_headers = {}
    header_roles = {}
    for key, header, line_no in pairs:
        role = Role(key)
        if role != Role.OTHER and role in role_headers:
            raise ConfigurationError(
                "Role {} is assigned to both '{}' and '{}' (line {})".format(
                    role.value, role_headers[role], header, line_no))
        if header in header_roles:
            raise ConfigurationError(
                "Header '{}' is mapped to both {} and {} (line {})".format(
                    header, header_roles[header].value, role.value, line_no))
        role_headers.setdefault(role, header)
        header_roles[header] = role
        mapping.append(ColumnRole(role, header))

    missing = [role.value for role in MANDATORY_ROLES if role not in role_headers]
    if missing:
        raise ConfigurationError(
            "The column mapping has no column for the mandatory role(s) {}".format(
                ", ".join(missing)))
    if imputation_requested and not any(role in role_headers for role in IMPUTATION_ROLES):
        raise ConfigurationError(
            "Imputation needs at least one of {} to be mapped".format(
                ", ".join(role.value for role in IMPUTATION_ROLES)))

    if headers is not None:
        mapping = complete_mapping(mapping, headers)
    return mapping


def complete_mapping(mapping, headers):
    """Orders the mapping by source header and adds Other roles for unmapped headers
    Args:
        mapping (list[ColumnRole]):
            validated mapping
        headers (list[str]):
            source headers in file order
    Returns:
        list[ColumnRole]:
            one distinct ColumnRole per source header
    Raises:
        ConfigurationError:
            if a mapped header is absent or a mapped header occurs twice in the source
    """
    verify_in_list(
        exc=ConfigurationError,
        mapped_headers=[column.source_header for column in mapping],
        source_headers=list(headers),
    )
    by_header = {column.source_header: column for column in mapping}
    duplicated = sorted({h for h in headers if headers.count(h) > 1 and h in by_header})
    if duplicated:
        raise ConfigurationError(
            "Mapped header(s) {} occur more than once in the source".format(duplicated))

    # unmapped columns get distinct names: blank ones by position, repeats numbered
    columns = []
    used = set(by_header)
    for position, header in enumerate(headers):
        if header in by_header:
            columns.append(by_header[header])
            continue
        name = header if header.strip() else "column {}".format(position + 1)
        unique = name
        n = 1
        while unique in used:
            n += 1
            unique = "{} ({})".format(name, n)
        used.add(unique)
        columns.append(ColumnRole(Role.OTHER, unique))
    return columns


def _serialize_row(fields):
    buffer = io.StringIO()
    csv.writer(buffer, lineterminator="").writerow(fields)
    return buffer.getvalue()


def blank_identifiers(fields, columns):
    """Blanks the Name and Contact fields of a row whose field count may not match the header

    A row with k fields too many or too few may have its identifiers shifted by up to k
    positions, so every field in that reach is blanked.

    Args:
        fields (list[str]):
            fields of the row as read
        columns (list[ColumnRole]):
            completed mapping of the header
    Returns:
        list[str]:
            the fields with identifier positions blanked
    """
    positions = [i for i, column in enumerate(columns) if column.role in IDENTIFIER_ROLES]
    if not positions:
        return list(fields)
    excess = len(fields) - len(columns)
    low = min(positions) + min(excess, 0)
    high = max(positions) + max(excess, 0)
    return ["" if low <= i <= high else field for i, field in enumerate(fields)]


def ingest_csv(path, mapping):
    """Reads a line-list CSV into RawRecords without touching cell contents

    Args:
        path (str):
            path to the CSV file, header row required
        mapping (list[ColumnRole]):
            validated column mapping
    Returns:
        list[RawRecord]:
            one record per well-formed data row
        list[CellVerdict]:
            quarantine and encoding verdicts raised while reading
    Raises:
        FileNotFoundError:
            if the file does not exist
        ConfigurationError:
            if the header does not carry the mapped columns
    """
    validate_paths(path)
    with open(path, "rb") as f:
        raw = f.read()
    text = raw.decode("utf-8", errors="replace")
    if text.startswith("\ufeff"):
        text = text[1:]
    rows = csv.reader(io.StringIO(text, newline=""))
    source_file = os.path.basename(path)

    header = next(rows, None)
    if header is None:
        logger.info("%s is empty", source_file)
        return [], []
    columns = complete_mapping(
        [column for column in mapping if column.role != Role.OTHER], header)

    records = []
    verdicts = []
    row_index = 0
    for fields in rows:
        if not fields:
            continue
        if len(fields) != len(columns):
            verdicts.append(CellVerdict(
                row_index=row_index, role=ROW_COLUMN, phase=Phase.SCREENED,
                rule_id="malformed-row", action=Action.REVIEW_QUEUED,
                before=_serialize_row(blank_identifiers(fields, columns)),
                note="expected {} fields, found {}".format(len(columns), len(fields)),
            ))
            row_index += 1
            continue
        cells = dict(zip(columns, fields))
        for column, value in cells.items():
            if "\ufffd" in value:
                verdicts.append(CellVerdict(
                    row_index=row_index, role=column, phase=Phase.SCREENED,
                    rule_id="invalid-encoding", action=Action.REVIEW_QUEUED,
                    before=value, note="bytes invalid as UTF-8 were replaced",
                ))
        records.append(RawRecord(row_index, cells, source_file))
        row_index += 1

    n_quarantined = sum(v.rule_id == "malformed-row" for v in verdicts)
    logger.info("Ingested %d rows from %s, %d quarantined", len(records), source_file,
                n_quarantined)
    return records, verdicts


def _merge(base, override):
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_params(path=None, **overrides):
    """Loads the packaged default params and merges a user params file over them

    Args:
        path (str):
            optional user params.toml; relative paths inside it resolve against its folder
        **overrides:
            top-level keys to override after loading, e.g. workers=4
    Returns:
        dict:
            validated params
    Raises:
        ConfigurationError:
            if a value is invalid
    """
    params = toml.load(DEFAULT_PARAMS_PATH)
    for key in ("mapping_path", "keywords_path", "gazetteer_path"):
        params[key] = resolve_path(params.get(key), PACKAGE_DIR)
    params["geocoder"]["stub_path"] = resolve_path(
        params["geocoder"].get("stub_path"), PACKAGE_DIR)

    if path is not None:
        validate_paths(path)
        try:
            user = toml.load(path)
        except toml.TomlDecodeError as err:
            raise ConfigurationError("{} is not valid TOML: {}".format(path, err)) from err
        base_dir = os.path.dirname(os.path.abspath(path))
        for key in ("mapping_path", "keywords_path", "gazetteer_path"):
            if key in user:
                user[key] = resolve_path(user[key], base_dir)
        for key in ("stub_path", "cache_path"):
            if user.get("geocoder", {}).get(key):
                user["geocoder"][key] = resolve_path(user["geocoder"][key], base_dir)
        params = _merge(params, user)
    params = _merge(params, overrides)
    check_params(params)
    return params


def check_params(params):
    """Validates a params dict
    Args:
        params (dict):
            params as returned by load_params
    Raises:
        ConfigurationError:
            if a value is invalid
    """
    if not params.get("mapping_path"):
        raise ConfigurationError("params need a mapping_path")
    if params["max_transforms"] < 1:
        raise ConfigurationError("max_transforms must be at least 1")
    if params["workers"] < 1:
        raise ConfigurationError("workers must be at least 1")
    anonymizer = params["anonymizer"]
    verify_in_list(
        exc=ConfigurationError, salt_scope=anonymizer["salt_scope"],
        supported_scopes=["batch", "fixed"])
    if anonymizer["id_length"] < 16:
        raise ConfigurationError("anonymizer.id_length must be at least 16")
    n = anonymizer["n"]
    if n < 2 or n & (n - 1):
        raise ConfigurationError("anonymizer.n must be a power of two greater than 1")
    if anonymizer["salt_scope"] == "fixed" and not anonymizer.get("fixed_salt"):
        raise ConfigurationError("salt_scope 'fixed' needs anonymizer.fixed_salt")


def read_mapping(params, headers=None):
    """Loads the column mapping named in params
    Args:
        params (dict):
            validated params
        headers (list[str]):
            optional source headers
    Returns:
        list[ColumnRole]:
            validated mapping
    """
    try:
        validate_paths(params["mapping_path"])
    except FileNotFoundError as err:
        raise ConfigurationError(str(err)) from err
    with open(params["mapping_path"], "r", encoding="utf-8") as f:
        text = f.read()
    return load_column_mapping(text, headers=headers, imputation_requested=params["impute"])
