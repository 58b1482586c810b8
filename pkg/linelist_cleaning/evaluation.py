"""Compares cleaned output with synthetic ground truth"""
import numpy as np
import pandas as pd

from linelist_cleaning.core_model import Action, Role


def merge_truth_df(truth_df, cleaned_df):
    """Merge ground truth and cleaned output over row_index
    Args:
        truth_df (pd.DataFrame):
            ground truth written by corpus_synth
        cleaned_df (pd.DataFrame):
            cleaned output
    Returns:
        pd.DataFrame:
            one row per ground truth row; cleaned columns get a '_clean' suffix and are
            empty for rows the cleaner did not emit
    """
    truth_df = truth_df.copy()
    cleaned_df = cleaned_df.copy()
    truth_df["row_index"] = truth_df["row_index"].astype(int)
    cleaned_df["row_index"] = cleaned_df["row_index"].astype(int)
    df = truth_df.merge(cleaned_df, on="row_index", how="left", suffixes=("", "_clean"))
    return df.fillna("")


def _flag(series):
    return series.astype(str).str.lower().isin(["true", "1"])


def _share(hits, mask):
    n = int(mask.sum())
    return {"n": n, "recovered": int(hits[mask].sum()),
            "rate": float(hits[mask].mean()) if n else 1.0}


def calc_recovery(df, age_tolerance=1e-3):
    """Recovery rates of every variable
    Args:
        df (pd.DataFrame):
            output of merge_truth_df
        age_tolerance (float):
            absolute tolerance in years for age matches
    Returns:
        dict:
            per variable, the number of truth rows considered, how many were recovered and
            the rate; 'wrong_dates' counts parsed test dates that differ from the truth
    """
    truth_date = df["test_date"].astype(str)
    clean_date = df["test_date_clean"].astype(str)
    ambiguous = _flag(df["date_ambiguous"])
    lossy = _flag(df["date_lossy"])
    queued = (_flag(df["date_expect_review"]) if "date_expect_review" in df
              else pd.Series(False, index=df.index))
    date_mask = (truth_date != "") & ~ambiguous & ~lossy & ~queued

    truth_age = pd.to_numeric(df["age_years"], errors="coerce").to_numpy()
    clean_age = pd.to_numeric(df["age_years_clean"], errors="coerce").to_numpy()
    age_mask = pd.Series(~np.isnan(truth_age), index=df.index)
    age_hits = pd.Series(np.isclose(truth_age, clean_age, atol=age_tolerance, rtol=0),
                         index=df.index)

    sex_mask = df["sex"] != ""
    location_mask = (df["settlement"] != "") | (df["district"] != "")
    location_hits = ((df["settlement"] == df["settlement_clean"])
                     & (df["district"] == df["district_clean"]))

    # imputed dates are estimates, not parses
    parsed = df["date_provenance"] == "Parsed"
    wrong = parsed & (truth_date != "") & (clean_date != truth_date)
    return {
        "date": _share(truth_date == clean_date, date_mask),
        "age": _share(age_hits, age_mask),
        "sex": _share(df["sex"] == df["sex_clean"], sex_mask),
        "location": _share(location_hits, location_mask),
        "wrong_dates": int(wrong.sum()),
        "wrong_ambiguous_dates": int((wrong & ambiguous).sum()),
    }


def ambiguity_violations(truth_df, audit, header="Date of Testing"):
    """Ambiguous rows whose true date was not queued among the review candidates
    Args:
        truth_df (pd.DataFrame):
            ground truth with row_index, test_date and date_ambiguous
        audit (AuditLog):
            audit log of the cleaning run, before review
        header (str):
            source header of the test date column
    Returns:
        list[int]:
            row indices that were auto-resolved or queued without the truth
    """
    violations = []
    ambiguous = truth_df[_flag(truth_df["date_ambiguous"])]
    for row in ambiguous.itertuples(index=False):
        verdict = audit.get((int(row.row_index), header))
        if verdict is None or verdict.role.role != Role.TEST_DATE:
            violations.append(int(row.row_index))
        elif verdict.action != Action.REVIEW_QUEUED or row.test_date not in verdict.candidates:
            violations.append(int(row.row_index))
    return violations
