import pytest

from linelist_cleaning.core_model import Action, ConfigurationError, Role, Sex
from linelist_cleaning.core_model_test import make_record
from linelist_cleaning.demographics import (
    AgeUnit, AgeValue, SexValue, clean_age_cell, clean_sex_cell, default_keyword_table,
    extract_age, extract_demographics, extract_sex, format_age, load_keyword_table,
    recover_misplaced
)


@pytest.mark.parametrize("raw,years,unit", [
    ("25", 25.0, AgeUnit.UNSTATED),
    ("6 months", 0.5, AgeUnit.MONTHS),
    ("6m", 0.5, AgeUnit.MONTHS),
    ("6 Mo", 0.5, AgeUnit.MONTHS),
    ("34 Yrs", 34.0, AgeUnit.YEARS),
    ("34y", 34.0, AgeUnit.YEARS),
    ("2 yrs 6 months", 2.5, AgeUnit.YEARS),
    ("73 days", 0.2, AgeUnit.DAYS),
    (" 45.5 ", 45.5, AgeUnit.UNSTATED),
    ("age-40", 40.0, AgeUnit.UNSTATED),
    ("0", 0.0, AgeUnit.UNSTATED),
    ("120", 120.0, AgeUnit.UNSTATED),
])
def test_extract_age(raw, years, unit):
    age = extract_age(raw)
    assert isinstance(age, AgeValue)
    assert age.years == pytest.approx(years, abs=1e-3)
    assert age.unit_seen == unit


def test_extract_age_failures():
    assert extract_age("") == Action.MISSING
    assert extract_age("   ") == Action.MISSING
    assert extract_age("135") == Action.REVIEW_QUEUED
    assert extract_age("adult") == Action.REVIEW_QUEUED
    # two bare numbers cannot be told apart
    assert extract_age("34 35") == Action.REVIEW_QUEUED
    assert extract_age("2 yrs 6") == Action.REVIEW_QUEUED

    # a glued m is only months when asked for
    assert extract_age("34M").years == pytest.approx(34 / 12, abs=1e-3)
    assert extract_age("34M", month_suffix=False).years == 34.0
    # a word starting with m is not a unit
    assert extract_age("25 male").years == 25.0


def test_extract_age_idempotent():
    for raw in ["25", "6 months", "2 yrs 6 months", "73 days", "1.25 years", "100"]:
        age = extract_age(raw)
        assert extract_age(format_age(age.years)).years == age.years

    with pytest.raises(ValueError):
        AgeValue(121, AgeUnit.YEARS)


def test_load_keyword_table():
    table = default_keyword_table()
    assert table["Female"] == ["female", "f"]
    assert table["Male"] == ["male", "m"]
    assert table["Review"] == ["child"]

    table = load_keyword_table("# local spellings\nmahila = Female\npurush = Male\n")
    assert table["Female"] == ["mahila"]
    assert table["Transgender"] == []

    with pytest.raises(ConfigurationError, match="invalid value"):
        load_keyword_table("boy = Child\n")
    with pytest.raises(ConfigurationError):
        load_keyword_table("# nothing\n")


@pytest.mark.parametrize("raw,category", [
    ("FEMALE", Sex.FEMALE),
    ("Female", Sex.FEMALE),
    ("f", Sex.FEMALE),
    ("M/22", Sex.MALE),
    ("male", Sex.MALE),
    (" M. ", Sex.MALE),
    ("Transgender", Sex.TRANSGENDER),
    ("TG", Sex.TRANSGENDER),
])
def test_extract_sex(raw, category):
    sex = extract_sex(raw)
    assert isinstance(sex, SexValue)
    assert sex.category == category

    # case and digit insensitive
    assert extract_sex(raw.upper()).category == category
    assert extract_sex("7" + raw + "42").category == category


def test_extract_sex_failures():
    assert extract_sex("") == Action.MISSING
    assert extract_sex("child") == Action.REVIEW_QUEUED
    assert extract_sex("22") == Action.REVIEW_QUEUED
    assert extract_sex("unknown") == Action.REVIEW_QUEUED

    # strict matching needs the whole cell to be a keyword
    assert extract_sex("6 months", strict=True) == Action.REVIEW_QUEUED
    assert extract_sex("25 F", strict=True).category == Sex.FEMALE

    # custom tables replace the packaged one
    table = load_keyword_table("mahila = Female\npurush = Male\n")
    assert extract_sex("Mahila", table).category == Sex.FEMALE
    assert extract_sex("male", table) == Action.REVIEW_QUEUED


def test_clean_age_cell():
    verdict, age = clean_age_cell("25")
    assert verdict.action == Action.UNCHANGED
    assert age.years == 25.0

    verdict, age = clean_age_cell("6 months", row_index=4)
    assert verdict.action == Action.AUTO_CORRECTED
    assert verdict.rule_id == "A02"
    assert verdict.after == "0.5"
    assert verdict.row_index == 4

    verdict, age = clean_age_cell(" 25 ")
    assert verdict.rule_id == "A01"
    assert verdict.after == "25"

    verdict, age = clean_age_cell("135")
    assert (verdict.action, verdict.rule_id, age) == (Action.REVIEW_QUEUED, "A03", None)

    verdict, age = clean_age_cell("adult")
    assert verdict.rule_id == "A04"

    verdict, age = clean_age_cell("")
    assert verdict.action == Action.MISSING


def test_clean_sex_cell():
    verdict, sex = clean_sex_cell("Male")
    assert verdict.action == Action.UNCHANGED
    assert sex.category == Sex.MALE

    verdict, sex = clean_sex_cell("M")
    assert (verdict.action, verdict.rule_id, verdict.after) == (
        Action.AUTO_CORRECTED, "S01", "Male")

    verdict, sex = clean_sex_cell("M/22")
    assert verdict.rule_id == "S01"

    verdict, sex = clean_sex_cell("Fem.ale patient")
    assert verdict.rule_id == "S02"
    assert verdict.after == "Female"

    verdict, sex = clean_sex_cell("Child")
    assert (verdict.action, verdict.rule_id) == (Action.REVIEW_QUEUED, "S03")

    verdict, sex = clean_sex_cell("xyz")
    assert (verdict.rule_id, sex) == ("S04", None)


def test_recover_misplaced():
    # age typed into the sex column, sex still extracted from it
    record = make_record(Age="", Sex="34/M")
    verdict, age = recover_misplaced(record, Role.AGE)
    assert verdict.action == Action.AUTO_CORRECTED
    assert verdict.rule_id == "A05"
    assert verdict.after == "34"
    assert verdict.role.role == Role.AGE
    assert "Sex" in verdict.note
    assert extract_sex(record.value(Role.SEX)).category == Sex.MALE

    # nothing anywhere
    assert recover_misplaced(make_record(), Role.AGE) is None

    # sex in an Other column
    record = make_record(Sex="", Test_Type="female")
    verdict, sex = recover_misplaced(record, Role.SEX)
    assert verdict.rule_id == "S06"
    assert sex.category == Sex.FEMALE
    assert "Test Type" in verdict.note

    # serial numbers in Other columns are not ages
    assert recover_misplaced(make_record(Sr_No="12"), Role.AGE) is None
    verdict, age = recover_misplaced(make_record(Test_Type="40 yrs"), Role.AGE)
    assert verdict.rule_id == "A06"

    # a stray age never reads as a sex keyword
    assert recover_misplaced(make_record(Age="6 months"), Role.SEX) is None

    with pytest.raises(ValueError):
        recover_misplaced(make_record(), Role.ADDRESS)


def test_extract_demographics():
    record = make_record(Age="", Sex="34/M")
    results = extract_demographics(record)
    assert results["age"][0].rule_id == "A05"
    assert results["age"][1].years == 34.0
    assert results["sex"][1].category == Sex.MALE

    # recovery never overwrites a primary value
    record = make_record(Age="25", Sex="34/M")
    results = extract_demographics(record)
    assert results["age"][1].years == 25.0

    record = make_record(Age="25 F", Sex="")
    results = extract_demographics(record)
    assert results["sex"][0].rule_id == "S05"
    assert results["sex"][1].category == Sex.FEMALE
    assert results["age"][1].years == 25.0
