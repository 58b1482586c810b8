"""Synthetic messy line-lists with known ground truth

Every date renderer targets one rule of the date cascade and knows which dates it can
express: the D13 form 'dmmyyyy' for instance only exists for single-digit days whose
first digits do not also start a D10/D11 pattern. Renderers are drawn with the
screening frequencies of a real surveillance year as default weights.
"""
import dataclasses
import datetime
import logging
import os
from functools import lru_cache
from typing import Callable

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from linelist_cleaning.address_locator import Gazetteer, GazetteerLevel
from linelist_cleaning.core_model import (
    EXCEL_EPOCH, ConfigurationError, YearContext, load_params
)
from linelist_cleaning.date_engine import serial_prefixes, serial_range
from linelist_cleaning.utils import verify_in_list

logger = logging.getLogger(__name__)

CORPUS_COLUMNS = [
    "Sr No", "Patient Name", "Contact No", "Age", "Sex", "Address", "Date of Admission",
    "Date of Testing", "Date of Discharge", "Test Type",
]
TRUTH_COLUMNS = [
    "row_index", "test_date", "date_rule", "date_ambiguous", "date_lossy",
    "date_expect_review", "age_years", "sex", "settlement", "district", "admission_date",
]
MONTH_ABBREVIATIONS = [
    "Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec",
]
SEPARATORS = ["/", "-", ".", " "]

FIRST_NAMES = [
    "Ram", "Gurpreet", "Harjit", "Sunita", "Manjit", "Baldev", "Kulwant", "Amandeep",
    "Rajinder", "Simran", "Paramjit", "Neha", "Jaswinder", "Pooja", "Sukhdev", "Anita",
]
LAST_NAMES = ["Singh", "Kaur", "Kumar", "Lal", "Devi", "Sharma", "Gill", "Sidhu"]
GUARDIAN_PHRASES = ["S/O", "D/O", "W/O"]
TEST_TYPES = ["NS1", "IgM ELISA", "NS1 + IgM"]
SEX_RENDERINGS = {
    "Male": ["Male", "M", "male", "M."],
    "Female": ["Female", "F", "female", "F."],
    "Transgender": ["Transgender", "TG"],
}
SEX_SHARES = {"Male": 0.55, "Female": 0.44, "Transgender": 0.01}
MISPLACED_SEX_TOKENS = {"Male": ["M", "Male"], "Female": ["F", "Female"]}


class IncompatibleDateError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class RendererSpec:
    """A messy way of typing a date, aimed at one rule of the cascade

    lossy renderers destroy the date on purpose; expect_review renderers land in the
    review queue with the true date among the candidates (lossy ones without it).
    """
    name: str
    rule_id_targeted: str
    ambiguous: bool
    weight: float
    compatible: Callable = dataclasses.field(repr=False, compare=False)
    render: Callable = dataclasses.field(repr=False, compare=False)
    lossy: bool = False
    expect_review: bool = False

    def __post_init__(self):
        if self.weight < 0:
            raise ConfigurationError("Renderer {} has a negative weight {}".format(
                self.name, self.weight))


def _serial(d):
    return (d - EXCEL_EPOCH).days


def _dd(d):
    return "{:02d}".format(d.day)


def _mm(d):
    return "{:02d}".format(d.month)


def _d10_or_d11_start(d):
    # single-digit day followed by a two-digit month that starts a D10/D11 pattern
    return d.day <= 3 and (d.month <= 9 or d.month == 11)


def _always(d, ctx):
    return True


def _single_day_month(d, ctx):
    return d.day <= 9 and d.month <= 9


def _not_yyyy_prefix(d, ctx):
    return _dd(d) + _mm(d) != ctx.yyyy


def _dmmyyyy_form(d, ctx):
    return d.day <= 9 and not _d10_or_d11_start(d)


def _typo_prefixes(ctx):
    return sorted(p for p in serial_prefixes(ctx) if p[1] not in "01")


# renderers, one block per targeted rule, in catalog order

def _render_separated(d, ctx, rng):
    if rng.random() < 0.2:
        return "{}-{}-{}".format(_dd(d), MONTH_ABBREVIATIONS[d.month - 1], ctx.yyyy)
    sep = SEPARATORS[rng.integers(len(SEPARATORS))]
    return sep.join([_dd(d), _mm(d), ctx.yyyy])


def _render_with_time(d, ctx, rng):
    return "{}/{}/{} {:02d}:{:02d}".format(
        _dd(d), _mm(d), ctx.yyyy, rng.integers(24), rng.integers(60))


def _compatible_d02(d, ctx):
    return (_dmmyyyy_form(d, ctx)
            and "{}{}".format(d.day, _mm(d)[0]) not in serial_prefixes(ctx))


def _render_dmmyy(d, ctx, rng):
    return "{}/{}/{}".format(d.day, _mm(d), ctx.yy)


def _compatible_d03(d, ctx):
    return bool(_typo_prefixes(ctx))


def _render_serial_typo(d, ctx, rng):
    low, high = serial_range(ctx)
    options = [p + str(x) + ctx.yy for p in _typo_prefixes(ctx) for x in range(10)
               if not low <= int(p + str(x) + ctx.yy) <= high]
    return options[rng.integers(len(options))]


def _compatible_d04(d, ctx):
    return "{:05d}".format(_serial(d))[-2:] != ctx.yy


def _render_shifted_serial(d, ctx, rng):
    return str(_serial(d) + 10000)


def _render_serial(d, ctx, rng):
    return str(_serial(d))


def _year_typo(ctx, rng, position, avoid=()):
    digits = [x for x in "0123456789" if x != ctx.yyyy[position] and x not in avoid]
    chosen = digits[rng.integers(len(digits))]
    return ctx.yyyy[:position] + chosen + ctx.yyyy[position + 1:]


def _render_year_typo(d, ctx, rng):
    return "{}/{}/{}".format(_dd(d), _mm(d), _year_typo(ctx, rng, 3))


def _swapped_year(ctx):
    return ctx.yyyy[2:] + ctx.yyyy[:2]


def _compatible_d06_low(d, ctx):
    return sum(a == b for a, b in zip(_swapped_year(ctx), ctx.yyyy)) < 2


def _render_swapped_year(d, ctx, rng):
    return "{}/{}/{}".format(_dd(d), _mm(d), _swapped_year(ctx))


def _compatible_d07(d, ctx):
    return d.day > 12


def _render_mmddyyyy(d, ctx, rng):
    return "{}/{}/{}".format(_mm(d), _dd(d), ctx.yyyy)


def _render_test_suffix(d, ctx, rng):
    return "{}/{}/{} NS1".format(_dd(d), _mm(d), ctx.yy)


def _render_dmm_year_typo(d, ctx, rng):
    # a '1' in the third year digit would read as a test-type suffix
    return "{}/{}/{}".format(d.day, _mm(d), _year_typo(ctx, rng, 2, avoid="1"))


def _compatible_d10(d, ctx):
    return (d.month == 11 and d.day <= 3) or (d.month == 1 and d.day in (11, 21, 31))


def _compatible_d11(d, ctx):
    return d.month <= 9 and d.day in (1, 2, 3, 10, 20, 30)


def _render_dm_yyyy(d, ctx, rng):
    if d.month == 11 or d.day <= 3:
        return "{}{}{}".format(d.day, _mm(d), ctx.yyyy)
    return "{}{}{}".format(d.day, d.month, ctx.yyyy)


def _render_ddmyyyy(d, ctx, rng):
    return "{}/{}/{}".format(_dd(d), d.month, ctx.yyyy)


def _render_dmmyyyy(d, ctx, rng):
    return "{}{}{}".format(d.day, _mm(d), ctx.yyyy)


def _compatible_d14(d, ctx):
    return (d.day >= 10 and d.month <= 9 and d.day not in (10, 20, 30)
            and not (_dd(d)[1] == "1" and d.month <= 2))


def _render_yyyydm(d, ctx, rng):
    return "{}/{}/{}".format(ctx.yyyy, d.day, d.month)


def _render_ddmm_yy_typo(d, ctx, rng):
    return "{}/{}/{}".format(_dd(d), _mm(d), _year_typo(ctx, rng, 3)[2:])


def _render_ddmmyy(d, ctx, rng):
    return "{}/{}/{}".format(_dd(d), _mm(d), ctx.yy)


def _render_year_only(d, ctx, rng):
    return ctx.yyyy


def _compatible_d19(d, ctx):
    return _not_yyyy_prefix(d, ctx) and _mm(d) != ctx.yy


def _render_ddmm(d, ctx, rng):
    return "{}/{}".format(_dd(d), _mm(d))


def _compatible_d20(d, ctx):
    return _single_day_month(d, ctx) and "{}{}".format(d.day, d.month) != ctx.yyyy[:2]


def _render_dmyy(d, ctx, rng):
    return "{}{}{}".format(d.day, d.month, ctx.yy)


def _compatible_d21(d, ctx):
    return d.day <= 9 or d.month <= 9


def _render_day_month(d, ctx, rng):
    return "{}/{}".format(d.day, d.month)


# screening counts of one surveillance year, used as relative weights
DEFAULT_RENDERERS = [
    RendererSpec("D22", "D22", False, 41747, _always, _render_separated),
    RendererSpec("D01", "D01", False, 565, _always, _render_with_time, lossy=True),
    RendererSpec("D02", "D02", False, 5627, _compatible_d02, _render_dmmyy),
    RendererSpec("D03", "D03", False, 202, _compatible_d03, _render_serial_typo, lossy=True,
                 expect_review=True),
    RendererSpec("D04", "D04", False, 257, _compatible_d04, _render_shifted_serial,
                 lossy=True),
    RendererSpec("D05", "D05", False, 42902, _always, _render_serial),
    RendererSpec("D06", "D06", False, 119, _always, _render_year_typo),
    RendererSpec("D06-low", "D06", False, 49, _compatible_d06_low, _render_swapped_year,
                 expect_review=True),
    RendererSpec("D07", "D07", False, 81, _compatible_d07, _render_mmddyyyy),
    RendererSpec("D08", "D08", False, 443, _not_yyyy_prefix, _render_test_suffix),
    RendererSpec("D09", "D09", False, 157, _dmmyyyy_form, _render_dmm_year_typo,
                 expect_review=True),
    RendererSpec("D10", "D10", True, 931, _compatible_d10, _render_dm_yyyy,
                 expect_review=True),
    RendererSpec("D11", "D11", True, 1181, _compatible_d11, _render_dm_yyyy,
                 expect_review=True),
    RendererSpec("D12", "D12", False, 38, _single_day_month, _render_ddmyyyy),
    RendererSpec("D13", "D13", False, 5447, _dmmyyyy_form, _render_dmmyyyy),
    RendererSpec("D14", "D14", False, 6900, _compatible_d14, _render_ddmyyyy),
    RendererSpec("D15", "D15", True, 395, _single_day_month, _render_yyyydm,
                 expect_review=True),
    RendererSpec("D16", "D16", False, 617, _not_yyyy_prefix, _render_ddmm_yy_typo),
    RendererSpec("D17", "D17", False, 23313, _not_yyyy_prefix, _render_ddmmyy),
    RendererSpec("D18", "D18", False, 0, _always, _render_year_only, lossy=True,
                 expect_review=True),
    RendererSpec("D19", "D19", False, 28, _compatible_d19, _render_ddmm),
    RendererSpec("D20", "D20", False, 307, _compatible_d20, _render_dmyy),
    RendererSpec("D21", "D21", False, 625, _compatible_d21, _render_day_month, lossy=True),
]


def renderer_specs(weights=None):
    """The default renderers, optionally reweighted

    Args:
        weights (dict):
            renderer name -> weight; renderers not named keep their default weight
    Returns:
        list[RendererSpec]:
            the renderers
    Raises:
        ConfigurationError:
            for unknown renderer names, negative weights or all-zero weights
    """
    specs = list(DEFAULT_RENDERERS)
    if weights:
        verify_in_list(exc=ConfigurationError, renderer_names=list(weights),
                       known_renderers=[spec.name for spec in specs])
        specs = [dataclasses.replace(spec, weight=float(weights.get(spec.name, spec.weight)))
                 for spec in specs]
    if sum(spec.weight for spec in specs) <= 0:
        raise ConfigurationError("At least one renderer needs a positive weight")
    return specs


def render_messy_date(d, spec, seed, ctx=None):
    """Types a date the way the renderer's data entry habit would

    Args:
        d (datetime.date):
            the true date
        spec (RendererSpec):
            the renderer
        seed (int):
            seed of the variations a renderer may pick from (separators, typo digits)
        ctx (YearContext):
            surveillance year, defaults to the year of d
    Returns:
        str:
            the raw cell text
    Raises:
        IncompatibleDateError:
            if the renderer cannot express d, or d is outside the surveillance year
    """
    ctx = ctx or YearContext(d.year)
    if d.year != ctx.year:
        raise IncompatibleDateError("{} is outside the surveillance year {}".format(
            d.isoformat(), ctx.year))
    if not spec.compatible(d, ctx):
        raise IncompatibleDateError("Renderer {} cannot express {}".format(
            spec.name, d.isoformat()))
    return spec.render(d, ctx, np.random.default_rng(seed))


def _year_days(year):
    first = datetime.date(year, 1, 1)
    n_days = (datetime.date(year, 12, 31) - first).days + 1
    return [first + datetime.timedelta(days=i) for i in range(n_days)]


@lru_cache(maxsize=None)
def _compatible_days(spec, ctx):
    return tuple(d for d in _year_days(ctx.year) if spec.compatible(d, ctx))


def _drawable(specs, ctx):
    """Renderers with a positive weight that can express some date of the year"""
    drawable = [spec for spec in specs if spec.weight > 0 and _compatible_days(spec, ctx)]
    skipped = [spec.name for spec in specs if spec.weight > 0 and spec not in drawable]
    if skipped:
        logger.info("Renderers %s cannot express any date of %d", skipped, ctx.year)
    if not drawable:
        raise ConfigurationError("No renderer can express a date of {}".format(ctx.year))
    weights = np.array([spec.weight for spec in drawable], dtype=float)
    return drawable, weights / weights.sum()


def _draw_date_cell(rng, drawable, probabilities, ctx):
    spec = drawable[rng.choice(len(drawable), p=probabilities)]
    days = _compatible_days(spec, ctx)
    d = days[rng.integers(len(days))]
    raw = render_messy_date(d, spec, int(rng.integers(2 ** 32)), ctx)
    return raw, d, spec


def sample_date_cells(n, ctx, seed, weights=None):
    """Draws messy date cells with their true dates

    Args:
        n (int):
            number of cells
        ctx (YearContext):
            surveillance year
        seed (int):
            random seed
        weights (dict):
            renderer weights, defaults to the screening frequencies
    Returns:
        pd.DataFrame:
            raw, test_date, renderer, date_rule, date_ambiguous, date_lossy and
            date_expect_review per cell
    """
    drawable, probabilities = _drawable(renderer_specs(weights), ctx)
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        raw, d, spec = _draw_date_cell(rng, drawable, probabilities, ctx)
        rows.append({
            "raw": raw, "test_date": d.isoformat(), "renderer": spec.name,
            "date_rule": spec.rule_id_targeted, "date_ambiguous": spec.ambiguous,
            "date_lossy": spec.lossy, "date_expect_review": spec.expect_review,
        })
    return pd.DataFrame(rows, columns=[
        "raw", "test_date", "renderer", "date_rule", "date_ambiguous", "date_lossy",
        "date_expect_review"])


def _render_plain_date(d, ctx):
    # admission and discharge dates are typed cleanly; other years fall back to ISO
    if d.year == ctx.year:
        return d.strftime("%d/%m/%Y")
    return d.isoformat()


def _draw_age(rng):
    """Returns (raw cell, years) of a randomly typed age"""
    draw = rng.random()
    if draw < 0.88:
        years = int(rng.integers(1, 86))
        template = ["{}", "{} Yrs", "{}Y", "{} years"][rng.integers(4)]
        return template.format(years), float(years)
    if draw < 0.94:
        months = int(rng.integers(1, 12))
        template = ["{} months", "{}m", "{} Mo"][rng.integers(3)]
        return template.format(months), round(months / 12, 3)
    if draw < 0.97:
        days = int(rng.integers(3, 29))
        return "{} days".format(days), round(days / 365.25, 3)
    years, months = int(rng.integers(1, 5)), int(rng.integers(1, 12))
    return "{} yrs {} months".format(years, months), round(years + months / 12, 3)


def _draw_sex(rng):
    categories = list(SEX_SHARES)
    sex = categories[rng.choice(len(categories), p=list(SEX_SHARES.values()))]
    options = SEX_RENDERINGS[sex]
    return options[rng.integers(len(options))], sex


def _misplace(rng, years, sex):
    """Types an integer age and a sex into the wrong cells, returns (age cell, sex cell)"""
    token = MISPLACED_SEX_TOKENS[sex][rng.integers(len(MISPLACED_SEX_TOKENS[sex]))]
    if rng.random() < 0.5:
        return "", "{}/{}".format(int(years), token[0])
    return token, str(int(years))


def _settlements(gazetteer):
    names = [entry.name for entry in gazetteer.entries.values()]
    settlements = []
    for entry in gazetteer.entries.values():
        if entry.level in (GazetteerLevel.DISTRICT, GazetteerLevel.BLOCK):
            continue
        location = gazetteer.location(entry.id)
        settlements.append((location, names.count(entry.name) == 1))
    return settlements


def _render_address(rng, location, unique_name):
    forms = [location.describe(), "Vill. " + location.describe()]
    if unique_name:
        forms.append("VPO {}, Distt. {}".format(location.settlement, location.district))
    address = forms[rng.integers(len(forms))]
    if rng.random() < 0.15:
        guardian = "{} {} {}".format(
            GUARDIAN_PHRASES[rng.integers(len(GUARDIAN_PHRASES))],
            FIRST_NAMES[rng.integers(len(FIRST_NAMES))], LAST_NAMES[rng.integers(len(LAST_NAMES))])
        address = "{}, {}".format(guardian, address)
    return address


def _generate_chunk(start, size, ctx, seed_sequence, specs, settlements, options):
    rng = np.random.default_rng(seed_sequence)
    drawable, probabilities = _drawable(specs, ctx)
    rows, truths = [], []
    for row_index in range(start, start + size):
        raw_date, d, spec = _draw_date_cell(rng, drawable, probabilities, ctx)
        date_missing = rng.random() < options["missing_rate"]
        admission = d - datetime.timedelta(days=int(rng.choice(5, p=[.1, .2, .4, .2, .1])))
        discharge = d + datetime.timedelta(days=int(rng.integers(3, 11)))

        age_raw, years = _draw_age(rng)
        sex_raw, sex = _draw_sex(rng)
        if sex != "Transgender" and rng.random() < options["misplaced_rate"]:
            years = float(rng.integers(1, 86))
            age_raw, sex_raw = _misplace(rng, years, sex)
        location, unique_name = settlements[rng.integers(len(settlements))]

        rows.append({
            "Sr No": str(row_index + 1),
            "Patient Name": "{} {}".format(FIRST_NAMES[rng.integers(len(FIRST_NAMES))],
                                           LAST_NAMES[rng.integers(len(LAST_NAMES))]),
            "Contact No": "98{}".format(rng.integers(10 ** 7, 10 ** 8)),
            "Age": age_raw,
            "Sex": sex_raw,
            "Address": _render_address(rng, location, unique_name),
            "Date of Admission": _render_plain_date(admission, ctx),
            "Date of Testing": "" if date_missing else raw_date,
            "Date of Discharge": _render_plain_date(discharge, ctx),
            "Test Type": TEST_TYPES[rng.integers(len(TEST_TYPES))],
        })
        truths.append({
            "row_index": row_index,
            "test_date": d.isoformat(),
            "date_rule": "" if date_missing else spec.rule_id_targeted,
            "date_ambiguous": spec.ambiguous and not date_missing,
            "date_lossy": spec.lossy or date_missing,
            "date_expect_review": spec.expect_review and not date_missing,
            "age_years": years,
            "sex": sex,
            "settlement": location.settlement,
            "district": location.district,
            "admission_date": admission.isoformat(),
        })
    return rows, truths


def generate_corpus(n, ctx, seed, weights=None, gazetteer=None, misplaced_rate=0.05,
                    missing_rate=0.02, workers=1, chunk_size=5000):
    """Generates a messy line-list and its ground truth

    Rows are generated in chunks with seeds spawned from `seed`, so the corpus only
    depends on (n, ctx, seed, weights, chunk_size) and not on the number of workers.

    Args:
        n (int):
            number of rows, at least 1
        ctx (YearContext):
            surveillance year of the test dates
        seed (int):
            random seed
        weights (dict):
            renderer name -> weight, defaults to the screening frequencies
        gazetteer (Gazetteer):
            settlements to draw addresses from, defaults to the packaged gazetteer
        misplaced_rate (float):
            share of rows whose age and sex land in the wrong cells
        missing_rate (float):
            share of rows with a blank test date
        workers (int):
            joblib workers
        chunk_size (int):
            rows per chunk
    Returns:
        str:
            the corpus as CSV text
        pd.DataFrame:
            ground truth, one row per corpus row
    """
    if n < 1:
        raise ValueError("A corpus needs at least one row, got n={}".format(n))
    for name, rate in (("misplaced_rate", misplaced_rate), ("missing_rate", missing_rate)):
        if not 0 <= rate <= 1:
            raise ValueError("{} must be within [0, 1], got {}".format(name, rate))
    specs = renderer_specs(weights)
    gazetteer = gazetteer or Gazetteer.load(load_params()["gazetteer_path"])
    settlements = _settlements(gazetteer)
    if not settlements:
        raise ConfigurationError("The gazetteer holds no settlements to draw addresses from")
    options = {"misplaced_rate": misplaced_rate, "missing_rate": missing_rate}

    starts = list(range(0, n, chunk_size))
    seeds = np.random.SeedSequence(seed).spawn(len(starts))
    chunk_args = [(start, min(chunk_size, n - start), ctx, child, specs, settlements, options)
                  for start, child in zip(starts, seeds)]
    if workers > 1 and len(chunk_args) > 1:
        chunks = Parallel(n_jobs=workers)(
            delayed(_generate_chunk)(*args) for args in chunk_args)
    else:
        chunks = [_generate_chunk(*args) for args in chunk_args]

    rows = [row for chunk_rows, _ in chunks for row in chunk_rows]
    truths = [truth for _, chunk_truths in chunks for truth in chunk_truths]
    corpus_df = pd.DataFrame(rows, columns=CORPUS_COLUMNS, dtype=str)
    truth_df = pd.DataFrame(truths, columns=TRUTH_COLUMNS)
    logger.info("Generated %d rows for %d with seed %d", n, ctx.year, seed)
    return corpus_df.to_csv(index=False), truth_df


def write_corpus(output_dir, csv_text, truth_df, stem="synthetic_linelist"):
    """Writes the corpus and its ground truth next to each other

    Returns:
        tuple[str, str]:
            paths of the corpus and the ground truth CSV
    """
    corpus_path = os.path.join(output_dir, stem + ".csv")
    truth_path = os.path.join(output_dir, stem + "_truth.csv")
    with open(corpus_path, "w", encoding="utf-8", newline="") as f:
        f.write(csv_text)
    truth_df.to_csv(truth_path, index=False)
    return corpus_path, truth_path
