"""Rule cascade that turns as-typed and spreadsheet-serial date cells into calendar dates

Every raw cell is reduced to a digit string, classified by length and pattern, and
rewritten towards the canonical ddmmyyyy form one rule at a time. The rules are
evaluated in catalog order and the first match wins.
"""
import datetime
import json
import re
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple

from linelist_cleaning.core_model import (
    EXCEL_EPOCH, Action, CalendarError, CellVerdict, ColumnRole, Phase, Role,
    SerialRangeError, TokenContractError
)

MONTH_NUMBERS = {
    "january": 1, "february": 2, "march": 3, "april": 4, "may": 5, "june": 6, "july": 7,
    "august": 8, "september": 9, "october": 10, "november": 11, "december": 12,
    "jan": 1, "feb": 2, "mar": 3, "apr": 4, "jun": 6, "jul": 7, "aug": 8, "sep": 9,
    "sept": 9, "oct": 10, "nov": 11, "dec": 12,
}
_MONTH_PATTERN = re.compile(
    r"(?<![a-z])(" + "|".join(sorted(MONTH_NUMBERS, key=len, reverse=True)) + r")(?![a-z])",
    re.IGNORECASE,
)
_NON_DIGITS = re.compile(r"[^0-9]")
_ISO_DATE = re.compile(r"\s*(\d{4})-(\d{2})-(\d{2})\s*")

# first serial the converter accepts; below it the 1900 leap-day artifact applies
SERIAL_FLOOR = 61

RULE_CATALOG = [
    {
        "rule_id": "D00", "length": "any",
        "condition": "Cell already holds an ISO-8601 yyyy-mm-dd date.",
        "transform": "Keep as is.",
        "reference_quote": "Date information can be analyzed when the date variable is "
                           "present in a standard date format (e.g. ISO format).",
    },
    {
        "rule_id": "D01", "length": ">8",
        "condition": "More than eight digits.",
        "transform": "Delete.",
        "reference_quote": "Maximum length of dates in ddmmyyyy format is eight",
    },
    {
        "rule_id": "D02", "length": "5",
        "condition": "Leading two digits are not a spreadsheet-serial prefix of the year and "
                     "the last two digits are the year's yy.",
        "transform": "Expand yy to yyyy.",
        "reference_quote": "Replace last two digits with yyyy year format.",
        "note": "The rationale 'dmmmy/ddmmy' reads as a typo for dmmyy/ddmyy.",
    },
    {
        "rule_id": "D03", "length": "5",
        "condition": "Numerically outside the year's serial range and ending in yy.",
        "transform": "Expand yy to yyyy.",
        "reference_quote": "Replace the last two digits with yyyy year format.",
    },
    {
        "rule_id": "D04", "length": "5",
        "condition": "Numerically outside the year's serial range, not ending in yy.",
        "transform": "Delete (raw value kept in the audit log for manual correction).",
        "reference_quote": "Erroneous data values",
    },
    {
        "rule_id": "D05", "length": "5",
        "condition": "Numerically within the year's serial range.",
        "transform": "Convert as days since 1899-12-30.",
        "reference_quote": "Excel format date extraction for five-digit values.",
    },
    {
        "rule_id": "D06", "length": "8",
        "condition": "Not ending with the year's yyyy.",
        "transform": "Replace the last four digits with yyyy; review when fewer than two "
                     "digits agree position by position.",
        "reference_quote": "Replace the last four digits with yyyy year format.",
    },
    {
        "rule_id": "D07", "length": "8",
        "condition": "Month positions hold a value greater than 12.",
        "transform": "Swap mmddyyyy to ddmmyyyy; review when the swap cannot give a month.",
        "reference_quote": "Convert to ddmmyyyy format from mmddyyyy format.",
    },
    {
        "rule_id": "D08", "length": "7",
        "condition": "Ends in 1, does not end in yyyy, and dropping the 1 leaves a six-digit "
                     "token read as-is by D15 or D17.",
        "transform": "Drop the trailing 1 (NS1 test mention).",
        "reference_quote": "Remove 1 from the last position.",
    },
    {
        "rule_id": "D09", "length": "7",
        "condition": "Not ending with the year's yyyy.",
        "transform": "Replace the last four digits with yyyy and queue for review.",
        "reference_quote": "Replace last four digits by 2019.",
        "note": "Generalised from 2019 to the surveillance year.",
    },
    {
        "rule_id": "D10", "length": "7",
        "condition": "Starts with 311, 211 or 111 and ends with yyyy.",
        "transform": "Review; candidates d-11-yyyy first, then dd-1-yyyy.",
        "reference_quote": "Values starting with 311, 211, or 111",
    },
    {
        "rule_id": "D11", "length": "7",
        "condition": "First two digits are 10, 20 or 30 and ends with yyyy.",
        "transform": "Review; candidates d-0m-yyyy first, then dd-m-yyyy.",
        "reference_quote": "insert a zero in the third location",
    },
    {
        "rule_id": "D12", "length": "7",
        "condition": "Starts with 0.",
        "transform": "Insert a zero at the third place (ddmyyyy to ddmmyyyy).",
        "reference_quote": "insert a zero at the third place",
    },
    {
        "rule_id": "D13", "length": "7",
        "condition": "Ends with yyyy and digits two and three are at most 12.",
        "transform": "Prepend a zero (dmmyyyy to ddmmyyyy).",
        "reference_quote": "Insert a zero at first position",
    },
    {
        "rule_id": "D14", "length": "7",
        "condition": "Any remaining seven-digit value.",
        "transform": "Insert a zero at the third place.",
        "reference_quote": "insert a zero at third location",
    },
    {
        "rule_id": "D15", "length": "6",
        "condition": "Leading four digits equal the year's yyyy.",
        "transform": "Review; candidate reshapes yyyydm to ddmmyyyy.",
        "reference_quote": "Convert yyyydm into ddmmyyyy format",
        "note": "The row's condition (dmyyyy) and action (yyyydm) disagree, so it is "
                "never resolved silently.",
    },
    {
        "rule_id": "D16", "length": "6",
        "condition": "Not ending with the year's yy.",
        "transform": "Replace the last two digits with yy.",
        "reference_quote": "Replace last two digits with yy format.",
    },
    {
        "rule_id": "D17", "length": "6",
        "condition": "Ends with yy, month positions at most 12, day positions at most 31.",
        "transform": "Expand yy to yyyy; review when month or day are out of bounds.",
        "reference_quote": "Replace last two digits with yyyy format.",
    },
    {
        "rule_id": "D18", "length": "4",
        "condition": "Equals the year's yyyy.",
        "transform": "Review.",
        "reference_quote": "Convert to ddmmyyyy format or manual correction",
    },
    {
        "rule_id": "D19", "length": "4",
        "condition": "Not ending with the year's yy.",
        "transform": "Read as ddmm and append yyyy.",
        "reference_quote": "Values with ddmm format",
    },
    {
        "rule_id": "D20", "length": "4",
        "condition": "Any remaining four-digit value (dmyy).",
        "transform": "Pad day and month with zeros and expand yy to yyyy.",
        "reference_quote": "inserting additional zeros for day and month",
    },
    {
        "rule_id": "D21", "length": "<=3",
        "condition": "Three digits or fewer.",
        "transform": "Delete (raw value kept in the audit log for manual correction).",
        "reference_quote": "Deletion/ Manual correction",
    },
    {
        "rule_id": "D22", "length": "8",
        "condition": "Ends with yyyy and month positions at most 12.",
        "transform": "Accept: parse ddmmyyyy.",
        "reference_quote": "same pattern should be present across the cells for correct "
                           "parsing",
    },
]
RULE_IDS = tuple(rule["rule_id"] for rule in RULE_CATALOG)


class RuleAction(str, Enum):
    TRANSFORM = "Transform"
    EXCEL_SERIAL = "ExcelSerial"
    DELETE = "Delete"
    REVIEW = "Review"
    ACCEPT = "Accept"


@dataclass(frozen=True)
class DateToken:
    digits: str
    original: str = ""
    month_name_substituted: bool = False

    def __post_init__(self):
        if _NON_DIGITS.search(self.digits):
            raise TokenContractError(
                "Date token '{}' holds non-digit characters".format(self.digits))

    def derive(self, digits):
        """Returns a new token for transformed digits, keeping the original text"""
        return DateToken(digits, self.original, self.month_name_substituted)


@dataclass(frozen=True)
class DateRuleOutcome:
    rule_id: str
    action: RuleAction
    transformed: Optional[DateToken] = None
    resolved: Optional[datetime.date] = None
    candidates: Tuple[datetime.date, ...] = ()
    needs_review: bool = False
    chain: Tuple[str, ...] = ()
    note: str = ""

    def __post_init__(self):
        if self.action == RuleAction.TRANSFORM and self.transformed is None:
            raise ValueError("Transform outcome of {} needs a token".format(self.rule_id))
        if self.action in (RuleAction.EXCEL_SERIAL, RuleAction.ACCEPT) and self.resolved is None:
            raise ValueError("{} outcome of {} needs a date".format(
                self.action.value, self.rule_id))


def standardize(raw):
    """Replaces month names by their number and strips every non-digit character
    Args:
        raw (str):
            raw cell text, may be empty
    Returns:
        DateToken:
            the digit token
    """
    substituted, n_months = _MONTH_PATTERN.subn(
        lambda match: "{:02d}".format(MONTH_NUMBERS[match.group(1).lower()]), raw)
    return DateToken(_NON_DIGITS.sub("", substituted), raw, n_months > 0)


def excel_serial_to_date(serial):
    """Converts a spreadsheet serial (days since 1899-12-30) to a date
    Args:
        serial (int):
            the serial, at least 61
    Returns:
        datetime.date:
            the date
    Raises:
        SerialRangeError:
            for serials below 61, where the 1900 leap-day artifact applies
    """
    if serial < SERIAL_FLOOR:
        raise SerialRangeError("Serial {} is below the supported floor {}".format(
            serial, SERIAL_FLOOR))
    return EXCEL_EPOCH + datetime.timedelta(days=serial)


def serial_range(ctx):
    """Returns the serials of 01 Jan and 31 Dec of the context year"""
    return ctx.serial_min, ctx.serial_max


@lru_cache(maxsize=None)
def _serial_prefixes(year_min, year_max):
    return frozenset("{:05d}".format(serial)[:2] for serial in range(year_min, year_max + 1))


def serial_prefixes(ctx):
    """Two-digit prefixes of every serial in the context year"""
    return _serial_prefixes(*serial_range(ctx))


def parse_ddmmyyyy(token):
    """Parses an eight-digit ddmmyyyy token
    Args:
        token (DateToken | str):
            the token or its digits
    Returns:
        datetime.date:
            the calendar date
    Raises:
        CalendarError:
            if the token is not eight digits or not a real date
    """
    digits = token.digits if isinstance(token, DateToken) else token
    if len(digits) != 8 or _NON_DIGITS.search(digits):
        raise CalendarError("'{}' is not an eight-digit ddmmyyyy token".format(digits))
    try:
        return datetime.date(int(digits[4:]), int(digits[2:4]), int(digits[:2]))
    except ValueError as err:
        raise CalendarError("'{}' is not a calendar date: {}".format(digits, err)) from err


def _valid_date(year, month, day):
    try:
        return datetime.date(year, month, day)
    except ValueError:
        return None


def _candidates(year, readings):
    dates = []
    for month, day in readings:
        day_value = _valid_date(year, month, day)
        if day_value is not None and day_value not in dates:
            dates.append(day_value)
    return tuple(dates)


def _positional_matches(a, b):
    return sum(x == y for x, y in zip(a, b))


def _reads_as_yyyydm(digits, ctx):
    return len(digits) == 6 and digits[:4] == ctx.yyyy


def _reads_as_ddmmyy(digits, ctx):
    return (len(digits) == 6 and digits[-2:] == ctx.yy and int(digits[2:4]) <= 12
            and int(digits[:2]) <= 31)


def _transform(rule_id, token, digits, needs_review=False):
    return DateRuleOutcome(rule_id, RuleAction.TRANSFORM, transformed=token.derive(digits),
                           needs_review=needs_review)


def _review(rule_id, candidates=(), note=""):
    return DateRuleOutcome(rule_id, RuleAction.REVIEW, candidates=candidates, note=note)


def _rules_length_5(token, ctx):
    digits = token.digits
    value = int(digits)
    low, high = serial_range(ctx)
    in_range = low <= value <= high
    if digits[:2] not in serial_prefixes(ctx) and digits[-2:] == ctx.yy:
        return _transform("D02", token, digits[:-2] + ctx.yyyy)
    if not in_range and digits[-2:] == ctx.yy:
        return _transform("D03", token, digits[:-2] + ctx.yyyy)
    if not in_range:
        return DateRuleOutcome("D04", RuleAction.DELETE)
    return DateRuleOutcome("D05", RuleAction.EXCEL_SERIAL, resolved=excel_serial_to_date(value))


def _rules_length_8(token, ctx):
    digits = token.digits
    if digits[-4:] != ctx.yyyy:
        low_confidence = _positional_matches(digits[-4:], ctx.yyyy) < 2
        return _transform("D06", token, digits[:4] + ctx.yyyy, needs_review=low_confidence)
    if int(digits[2:4]) > 12:
        if int(digits[:2]) > 12:
            return _review("D07", note="neither reading gives a month")
        return _transform("D07", token, digits[2:4] + digits[:2] + digits[4:])
    try:
        return DateRuleOutcome("D22", RuleAction.ACCEPT, resolved=parse_ddmmyyyy(digits))
    except CalendarError:
        return _review("D22", note="calendar-invalid")


def _rules_length_7(token, ctx):
    digits = token.digits
    year = ctx.year
    ends_yyyy = digits[-4:] == ctx.yyyy
    if digits[-1] == "1" and not ends_yyyy and (
            _reads_as_yyyydm(digits[:-1], ctx) or _reads_as_ddmmyy(digits[:-1], ctx)):
        return _transform("D08", token, digits[:-1])
    if not ends_yyyy:
        return _transform("D09", token, digits[:3] + ctx.yyyy, needs_review=True)
    if digits[:3] in ("311", "211", "111"):
        # d-11-yyyy reading first: no change is needed for November/December dates
        readings = [(int(digits[1:3]), int(digits[0])), (int(digits[2]), int(digits[:2]))]
        return _review("D10", _candidates(year, readings), note="d-mm or dd-m")
    if digits[:2] in ("10", "20", "30"):
        readings = [(int(digits[1:3]), int(digits[0])), (int(digits[2]), int(digits[:2]))]
        return _review("D11", _candidates(year, readings), note="d-mm or dd-m")
    if digits[0] == "0":
        return _transform("D12", token, digits[:2] + "0" + digits[2:])
    if int(digits[1:3]) <= 12:
        return _transform("D13", token, "0" + digits)
    return _transform("D14", token, digits[:2] + "0" + digits[2:])


def _rules_length_6(token, ctx):
    digits = token.digits
    if _reads_as_yyyydm(digits, ctx):
        candidates = _candidates(ctx.year, [(int(digits[5]), int(digits[4]))])
        return _review("D15", candidates, note="yyyydm")
    if digits[-2:] != ctx.yy:
        return _transform("D16", token, digits[:4] + ctx.yy)
    if _reads_as_ddmmyy(digits, ctx):
        return _transform("D17", token, digits[:4] + ctx.yyyy)
    return _review("D17", note="month or day out of bounds")


def _rules_length_4(token, ctx):
    digits = token.digits
    if digits == ctx.yyyy:
        return _review("D18", note="year only")
    if digits[-2:] != ctx.yy:
        return _transform("D19", token, digits + ctx.yyyy)
    return _transform("D20", token, "0" + digits[0] + "0" + digits[1] + ctx.yyyy)


def apply_rule(token, ctx):
    """Applies the first matching rule to a token, one step

    Args:
        token (DateToken):
            standardized token
        ctx (YearContext):
            surveillance year
    Returns:
        DateRuleOutcome:
            outcome of exactly one rule
    Raises:
        TokenContractError:
            if the token is not a DateToken of digits
    """
    if not isinstance(token, DateToken):
        raise TokenContractError("Expected a standardized DateToken, got {!r}".format(token))
    length = len(token.digits)
    if length > 8:
        return DateRuleOutcome("D01", RuleAction.DELETE)
    if length == 5:
        return _rules_length_5(token, ctx)
    if length == 8:
        return _rules_length_8(token, ctx)
    if length == 7:
        return _rules_length_7(token, ctx)
    if length == 6:
        return _rules_length_6(token, ctx)
    if length == 4:
        return _rules_length_4(token, ctx)
    return DateRuleOutcome("D21", RuleAction.DELETE)


def classify_and_apply(token, ctx, max_transforms=4):
    """Runs the rule cascade until a terminal rule fires

    Transform outcomes re-enter classification. The cascade stops with a Review
    outcome when a token repeats or more than max_transforms rewrites are needed.

    Args:
        token (DateToken):
            standardized token
        ctx (YearContext):
            surveillance year
        max_transforms (int):
            cap on rewrites
    Returns:
        DateRuleOutcome:
            the terminal outcome, with the full rule chain
    """
    chain = []
    seen = {token.digits}
    needs_review = False
    current = token
    transforms = 0
    while True:
        outcome = apply_rule(current, ctx)
        chain.append(outcome.rule_id)
        needs_review = needs_review or outcome.needs_review
        if outcome.action != RuleAction.TRANSFORM:
            break
        transforms += 1
        current = outcome.transformed
        if current.digits in seen or transforms > max_transforms:
            return DateRuleOutcome(
                outcome.rule_id, RuleAction.REVIEW, transformed=current, chain=tuple(chain),
                note="cascade did not settle")
        seen.add(current.digits)

    if needs_review and outcome.action in (RuleAction.ACCEPT, RuleAction.EXCEL_SERIAL):
        return DateRuleOutcome(
            outcome.rule_id, RuleAction.REVIEW, transformed=current,
            candidates=(outcome.resolved,), chain=tuple(chain), note="low-confidence rewrite")
    return DateRuleOutcome(
        outcome.rule_id, outcome.action, transformed=current, resolved=outcome.resolved,
        candidates=outcome.candidates, chain=tuple(chain), note=outcome.note)


def clean_date_cell(raw, ctx, row_index=0, column=None, max_transforms=4):
    """Screens, diagnoses and edits one date cell

    Args:
        raw (str):
            raw cell text
        ctx (YearContext):
            surveillance year
        row_index (int):
            row the cell belongs to
        column (ColumnRole):
            column the cell belongs to, defaults to an unnamed TestDate column
        max_transforms (int):
            cap on rewrites in the cascade
    Returns:
        CellVerdict:
            exactly one verdict; after holds the ISO date when one was resolved
    """
    column = column or ColumnRole(Role.TEST_DATE, "")

    def verdict(action, phase, rule_id="", after="", candidates=(), note=""):
        return CellVerdict(row_index, column, phase, rule_id, action, raw, after,
                           tuple(c.isoformat() for c in candidates), note)

    if not raw.strip():
        return verdict(Action.MISSING, Phase.SCREENED)

    iso = _ISO_DATE.fullmatch(raw)
    if iso:
        day = _valid_date(int(iso.group(1)), int(iso.group(2)), int(iso.group(3)))
        if day is None:
            return verdict(Action.REVIEW_QUEUED, Phase.DIAGNOSED, "D00", note="calendar-invalid")
        if not ctx.is_plausible(day):
            return verdict(Action.REVIEW_QUEUED, Phase.DIAGNOSED, "D00", candidates=(day,),
                           note="outside plausibility window")
        if raw == day.isoformat():
            return verdict(Action.UNCHANGED, Phase.SCREENED, after=raw)
        return verdict(Action.AUTO_CORRECTED, Phase.EDITED, "D00", after=day.isoformat())

    outcome = classify_and_apply(standardize(raw), ctx, max_transforms=max_transforms)
    rule_id = ">".join(outcome.chain)
    if outcome.action == RuleAction.DELETE:
        return verdict(Action.DELETED, Phase.EDITED, rule_id, note=outcome.note)
    if outcome.action == RuleAction.REVIEW:
        return verdict(Action.REVIEW_QUEUED, Phase.DIAGNOSED, rule_id,
                       candidates=outcome.candidates, note=outcome.note)
    if not ctx.is_plausible(outcome.resolved):
        return verdict(Action.REVIEW_QUEUED, Phase.DIAGNOSED, rule_id,
                       candidates=(outcome.resolved,), note="outside plausibility window")
    return verdict(Action.AUTO_CORRECTED, Phase.EDITED, rule_id,
                   after=outcome.resolved.isoformat())


def rule_catalog():
    """Returns a copy of the rule catalog as a list of dicts"""
    return [dict(rule) for rule in RULE_CATALOG]


def export_rule_catalog(path):
    """Writes the rule catalog as JSON
    Args:
        path (str):
            output file
    """
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"rules": rule_catalog()}, f, indent=2)
