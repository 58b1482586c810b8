"""Test-date imputation from admission, OPD and discharge dates"""
import datetime
import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from linelist_cleaning.core_model import Action, CellVerdict, Phase, Provenance, Role

logger = logging.getLogger(__name__)

# differences below this many days are data-entry errors, not delays
ANOMALY_THRESHOLD_DAYS = -1


@dataclass
class OffsetStats:
    year: int
    mean_admission_to_test: Optional[float] = None
    mean_test_to_discharge: Optional[float] = None
    n_admission_pairs: int = 0
    n_discharge_pairs: int = 0
    n_admission_anomalies: int = 0
    n_discharge_anomalies: int = 0

    def to_dict(self):
        return asdict(self)


def round_half_up(days):
    return int(math.floor(days + 0.5))


def _mean_offset(differences):
    """Mean of day differences, excluding anomalies
    Returns:
        float:
            mean, None when no valid pair remains
        int:
            number of valid pairs
        int:
            number of excluded anomalies
    """
    differences = np.asarray(differences, dtype=float)
    valid = differences[differences >= ANOMALY_THRESHOLD_DAYS]
    n_anomalies = int(differences.size - valid.size)
    if valid.size == 0:
        return None, 0, n_anomalies
    return float(valid.mean()), int(valid.size), n_anomalies


def admission_donor(record):
    """Admission date, or the OPD date when admission is absent"""
    return record.dates.get(Role.ADMISSION_DATE) or record.dates.get(Role.OPD_DATE)


def compute_offsets(records, year):
    """Computes the batch mean delays around the test date

    Only records whose test date was parsed take part. Differences below -1 day are
    counted as anomalies and left out of the means.

    Args:
        records (list[CleanRecord]):
            records after date cleaning
        year (int):
            surveillance year of the batch
    Returns:
        OffsetStats:
            the batch offsets
    """
    to_test, to_discharge = [], []
    for record in records:
        if record.test_date is None or record.test_date_provenance != Provenance.PARSED:
            continue
        donor = admission_donor(record)
        if donor is not None:
            to_test.append((record.test_date - donor).days)
        discharge = record.dates.get(Role.DISCHARGE_DATE)
        if discharge is not None:
            to_discharge.append((discharge - record.test_date).days)

    stats = OffsetStats(year)
    (stats.mean_admission_to_test, stats.n_admission_pairs,
     stats.n_admission_anomalies) = _mean_offset(to_test)
    (stats.mean_test_to_discharge, stats.n_discharge_pairs,
     stats.n_discharge_anomalies) = _mean_offset(to_discharge)
    logger.info("Offsets for %d: %d admission pairs, %d discharge pairs", year,
                stats.n_admission_pairs, stats.n_discharge_pairs)
    return stats


def impute_test_date(record, stats, ctx=None, column=None, before=""):
    """Estimates a missing test date from a donor date and the batch offsets

    Args:
        record (CleanRecord):
            record whose test date is missing
        stats (OffsetStats):
            batch offsets
        ctx (YearContext):
            optional batch context; imputed dates outside its window go to review
        column (ColumnRole):
            test date column of the verdict
        before (str):
            raw text of the test date cell
    Returns:
        CellVerdict:
            AutoCorrected with the imputed ISO date, ReviewQueued when implausible, or
            Missing when no donor date is usable
    Raises:
        ValueError:
            if the record already has a test date
    """
    if record.test_date is not None:
        raise ValueError("Row {} already has a test date".format(record.row_index))

    donor = admission_donor(record)
    discharge = record.dates.get(Role.DISCHARGE_DATE)
    if donor is not None and stats.mean_admission_to_test is not None:
        offset = round_half_up(stats.mean_admission_to_test)
        imputed = donor + datetime.timedelta(days=offset)
        rule_id = "M01"
        note = "{} + {} days".format(donor.isoformat(), offset)
    elif discharge is not None and stats.mean_test_to_discharge is not None:
        offset = round_half_up(stats.mean_test_to_discharge)
        imputed = discharge - datetime.timedelta(days=offset)
        rule_id = "M02"
        note = "{} - {} days".format(discharge.isoformat(), offset)
    else:
        return CellVerdict(record.row_index, column, Phase.SCREENED, "", Action.MISSING,
                           before)

    if ctx is not None and not ctx.is_plausible(imputed):
        return CellVerdict(record.row_index, column, Phase.DIAGNOSED, rule_id + ">M03",
                           Action.REVIEW_QUEUED, before, candidates=(imputed.isoformat(),),
                           note=note + ", outside the plausibility window")
    return CellVerdict(record.row_index, column, Phase.EDITED, rule_id, Action.AUTO_CORRECTED,
                       before, imputed.isoformat(), note=note)
