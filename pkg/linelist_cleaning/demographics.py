"""Age and sex extraction, with recovery of values typed into the wrong column"""
import os
import re
from dataclasses import dataclass
from enum import Enum

from linelist_cleaning.core_model import (
    PACKAGE_DIR, Action, CellVerdict, ConfigurationError, Phase, Role, Sex
)
from linelist_cleaning.utils import parse_key_value_lines, verify_in_list

MAX_AGE = 120
DAYS_PER_YEAR = 365.25
REVIEW = "Review"
CATEGORY_ORDER = (Sex.FEMALE.value, Sex.MALE.value, Sex.TRANSGENDER.value, REVIEW)
DEFAULT_KEYWORDS_PATH = os.path.join(PACKAGE_DIR, "configs", "sex_keywords.txt")


class AgeUnit(str, Enum):
    YEARS = "Years"
    MONTHS = "Months"
    DAYS = "Days"
    UNSTATED = "Unstated"


_UNIT_GROUPS = {
    AgeUnit.YEARS: r"years?|yrs?|y",
    AgeUnit.MONTHS: r"months?|mnths?|mths?|mos?",
    AgeUnit.DAYS: r"days?|d",
}
_AGE_TOKEN = re.compile(
    r"(?P<number>\d+(?:\.\d+)?)"
    r"(?:(?P<attached_m>m)(?![a-z])"
    r"|\s*(?P<unit>" + "|".join(_UNIT_GROUPS.values()) + r")(?![a-z]))?"
)
_BARE_NUMBER = re.compile(r"\d+(?:\.\d+)?")
_SEX_NOISE = re.compile(r"[\W\d_]+")


@dataclass(frozen=True)
class AgeValue:
    years: float
    unit_seen: AgeUnit

    def __post_init__(self):
        if not 0 <= self.years <= MAX_AGE:
            raise ValueError("Age {} is outside [0, {}]".format(self.years, MAX_AGE))


@dataclass(frozen=True)
class SexValue:
    category: Sex
    matched_keyword: str


def format_age(years):
    """Renders an age without trailing zeros, e.g. 25.0 -> '25', 0.5 -> '0.5'"""
    return ("%.3f" % years).rstrip("0").rstrip(".")


def _unit_of(match):
    if match.group("attached_m"):
        return AgeUnit.MONTHS
    unit = match.group("unit")
    if unit is None:
        return AgeUnit.UNSTATED
    for age_unit, pattern in _UNIT_GROUPS.items():
        if re.fullmatch(pattern, unit):
            return age_unit
    return AgeUnit.UNSTATED


def extract_age(raw, month_suffix=True):
    """Extracts an age in years from free text

    Bare numbers are years; 'yr/yrs/y', 'month/mo' (or an 'm' glued to the digits) and
    'day/d' scale to years. Compound ages such as '2 yrs 6 months' add up.

    Args:
        raw (str):
            raw cell text
        month_suffix (bool):
            whether an 'm' glued to the digits means months; recovery from the sex
            column switches this off so '34M' stays 34 years
    Returns:
        AgeValue | Action:
            the age, or Action.MISSING / Action.REVIEW_QUEUED
    """
    text = raw.strip().lower()
    if not text:
        return Action.MISSING
    parts = []
    for match in _AGE_TOKEN.finditer(text):
        unit = _unit_of(match)
        if unit == AgeUnit.MONTHS and match.group("attached_m") and not month_suffix:
            unit = AgeUnit.UNSTATED
        parts.append((float(match.group("number")), unit))
    if not parts:
        return Action.REVIEW_QUEUED

    bare = [value for value, unit in parts if unit == AgeUnit.UNSTATED]
    if bare and len(parts) > 1:
        # two bare numbers, or a bare number next to a unit, cannot be read reliably
        return Action.REVIEW_QUEUED

    years = 0.0
    for value, unit in parts:
        if unit == AgeUnit.MONTHS:
            years += value / 12
        elif unit == AgeUnit.DAYS:
            years += value / DAYS_PER_YEAR
        else:
            years += value
    years = round(years, 3)
    if years > MAX_AGE:
        return Action.REVIEW_QUEUED

    units = {unit for _, unit in parts}
    for unit in (AgeUnit.YEARS, AgeUnit.MONTHS, AgeUnit.DAYS, AgeUnit.UNSTATED):
        if unit in units:
            return AgeValue(years, unit)


def load_keyword_table(text):
    """Parses a `keyword = Category` table
    Args:
        text (str):
            table contents; categories are Female, Male, Transgender or Review
    Returns:
        dict[str, list[str]]:
            keywords per category, in CATEGORY_ORDER, longest keyword first
    Raises:
        ConfigurationError:
            for unknown categories or an empty table
    """
    try:
        pairs = parse_key_value_lines(text)
    except ValueError as err:
        raise ConfigurationError(str(err)) from err
    if not pairs:
        raise ConfigurationError("The sex keyword table is empty")
    verify_in_list(
        exc=ConfigurationError, keyword_categories=[value for _, value, _ in pairs],
        supported_categories=list(CATEGORY_ORDER))
    table = {category: [] for category in CATEGORY_ORDER}
    for keyword, category, _ in pairs:
        keyword = _SEX_NOISE.sub("", keyword.lower())
        if keyword and keyword not in table[category]:
            table[category].append(keyword)
    for category in table:
        table[category].sort(key=len, reverse=True)
    return table


def default_keyword_table():
    with open(DEFAULT_KEYWORDS_PATH, "r", encoding="utf-8") as f:
        return load_keyword_table(f.read())


def standardize_sex_text(raw):
    """Deletes digits, punctuation and whitespace and lowercases"""
    return _SEX_NOISE.sub("", raw.lower())


def extract_sex(raw, keywords=None, strict=False):
    """Extracts the sex category by keyword

    Categories are tried in the order Female, Male, Transgender, Review so that 'm' only
    counts when no female keyword is present.

    Args:
        raw (str):
            raw cell text
        keywords (dict):
            keyword table from load_keyword_table, defaults to the packaged table
        strict (bool):
            require the whole standardized cell to equal a keyword
    Returns:
        SexValue | Action:
            the category, or Action.MISSING / Action.REVIEW_QUEUED
    """
    if not raw.strip():
        return Action.MISSING
    keywords = keywords if keywords is not None else default_keyword_table()
    text = standardize_sex_text(raw)
    if not text:
        return Action.REVIEW_QUEUED
    for category in CATEGORY_ORDER:
        for keyword in keywords.get(category, ()):
            hit = text == keyword if strict else keyword in text
            if hit:
                if category == REVIEW:
                    return Action.REVIEW_QUEUED
                return SexValue(Sex(category), keyword)
    return Action.REVIEW_QUEUED


def clean_age_cell(raw, row_index=0, column=None):
    """Extracts the age of a cell as a verdict
    Returns:
        CellVerdict:
            the verdict
        AgeValue:
            the age, None when not extracted
    """
    result = extract_age(raw)
    if result == Action.MISSING:
        return CellVerdict(row_index, column, Phase.SCREENED, "", Action.MISSING, raw), None
    if not isinstance(result, AgeValue):
        rule_id = "A04" if not _BARE_NUMBER.search(raw) else "A03"
        return CellVerdict(row_index, column, Phase.DIAGNOSED, rule_id,
                           Action.REVIEW_QUEUED, raw), None
    after = format_age(result.years)
    if after == raw:
        return CellVerdict(row_index, column, Phase.SCREENED, "A01", Action.UNCHANGED, raw,
                           after), result
    rule_id = "A01" if _BARE_NUMBER.fullmatch(raw.strip()) else "A02"
    return CellVerdict(row_index, column, Phase.EDITED, rule_id, Action.AUTO_CORRECTED, raw,
                       after, note=result.unit_seen.value), result


def clean_sex_cell(raw, keywords=None, row_index=0, column=None):
    """Extracts the sex of a cell as a verdict
    Returns:
        CellVerdict:
            the verdict
        SexValue:
            the category, None when not extracted
    """
    result = extract_sex(raw, keywords)
    if result == Action.MISSING:
        return CellVerdict(row_index, column, Phase.SCREENED, "", Action.MISSING, raw), None
    if not isinstance(result, SexValue):
        rule_id = "S03" if "child" in standardize_sex_text(raw) else "S04"
        return CellVerdict(row_index, column, Phase.DIAGNOSED, rule_id,
                           Action.REVIEW_QUEUED, raw), None
    after = result.category.value
    if after == raw:
        return CellVerdict(row_index, column, Phase.SCREENED, "S01", Action.UNCHANGED, raw,
                           after), result
    rule_id = "S01" if standardize_sex_text(raw) == result.matched_keyword else "S02"
    return CellVerdict(row_index, column, Phase.EDITED, rule_id, Action.AUTO_CORRECTED, raw,
                       after, note="keyword '{}'".format(result.matched_keyword)), result


_PAIRED_ROLE = {Role.AGE: Role.SEX, Role.SEX: Role.AGE}
_RECOVERY_RULES = {Role.AGE: ("A05", "A06"), Role.SEX: ("S05", "S06")}


def recover_misplaced(record, missing_role, keywords=None):
    """Looks for a misplaced age or sex value in the other cells of the same row

    Phase 1 scans the paired demographic column (Age <-> Sex), phase 2 the Other
    columns in source order. Cells are only read, so a shared cell such as '34/M' still
    yields the sex when the sex column is processed.

    Args:
        record (RawRecord):
            the row
        missing_role (Role):
            Role.AGE or Role.SEX
        keywords (dict):
            sex keyword table
    Returns:
        tuple[CellVerdict, AgeValue | SexValue] | None:
            AutoCorrected verdict and recovered value, or None when nothing was found
    """
    if missing_role not in _PAIRED_ROLE:
        raise ValueError("Recovery only applies to Age and Sex, got {}".format(missing_role))
    target = record.column(missing_role)
    if target is None:
        return None
    keywords = keywords if keywords is not None else default_keyword_table()
    phases = [(column, 1) for column in record.columns(_PAIRED_ROLE[missing_role])]
    phases += [(column, 2) for column in record.columns(Role.OTHER)]

    for column, phase in phases:
        cell = record.cells[column]
        if not cell.strip():
            continue
        if missing_role == Role.AGE:
            value = extract_age(cell, month_suffix=False)
            # Other columns hold serial numbers and counts; only unit-marked ages count
            found = isinstance(value, AgeValue) and (
                phase == 1 or value.unit_seen != AgeUnit.UNSTATED)
            after = format_age(value.years) if found else ""
        else:
            value = extract_sex(cell, keywords, strict=True)
            found = isinstance(value, SexValue)
            after = value.category.value if found else ""
        if not found:
            continue
        before = record.cells[target]
        if after == before:
            continue
        verdict = CellVerdict(
            record.row_index, target, Phase.EDITED, _RECOVERY_RULES[missing_role][phase - 1],
            Action.AUTO_CORRECTED, before, after,
            note="recovered from '{}'".format(column.source_header),
        )
        return verdict, value
    return None


def extract_demographics(record, keywords=None):
    """Extracts age and sex of a row, recovering misplaced values when needed

    Args:
        record (RawRecord):
            the row
        keywords (dict):
            sex keyword table
    Returns:
        dict:
            'age' and 'sex' entries, each a (CellVerdict, value or None) tuple; roles that
            are not mapped are absent
    """
    keywords = keywords if keywords is not None else default_keyword_table()
    results = {}
    age_column = record.column(Role.AGE)
    if age_column is not None:
        results["age"] = clean_age_cell(record.cells[age_column], record.row_index, age_column)
    sex_column = record.column(Role.SEX)
    if sex_column is not None:
        results["sex"] = clean_sex_cell(record.cells[sex_column], keywords, record.row_index,
                                        sex_column)
    for key, role in (("age", Role.AGE), ("sex", Role.SEX)):
        if key in results and results[key][1] is None:
            recovered = recover_misplaced(record, role, keywords)
            if recovered is not None:
                results[key] = recovered
    return results
