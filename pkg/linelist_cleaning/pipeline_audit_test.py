import datetime
import json
import os
import tempfile

import pytest

from linelist_cleaning.address_locator import GeocodeCache, OfflineGeocoder
from linelist_cleaning.anonymizer import REDACTED
from linelist_cleaning.anonymizer_test import make_config
from linelist_cleaning.core_model import (
    ROW_COLUMN, Action, CellVerdict, ColumnRole, GeocodingError, Phase, Provenance, Role, Sex,
    YearContext, load_params
)
from linelist_cleaning.core_model_test import make_record
from linelist_cleaning.pipeline_audit import (
    OUTPUT_COLUMNS, AuditLog, LineListCleaner, Resolution, ReviewItem, append_resolution,
    apply_resolutions, attach_resolutions, load_review_items, render_summary_text,
    run_pipeline, summarize, write_clean_csv, write_review_items
)

CTX = YearContext(2019)
TEST_COLUMN = ColumnRole(Role.TEST_DATE, "Date of Testing")


def make_params(**overrides):
    overrides.setdefault("progress", False)
    return load_params(**overrides)


def make_cleaner(params=None, **resources):
    params = params or make_params()
    resources.setdefault("anon_cfg", make_config())
    return LineListCleaner(params, CTX, **resources)


def golden_record(row_index=0, **values):
    """A row every stage accepts as is"""
    cells = dict(
        Sr_No=str(row_index + 1), Patient_Name="Ram Lal {}".format(row_index),
        Contact_No="98140{:05d}".format(row_index), Age="34", Sex="Male",
        Address="Khanna, Ludhiana", Date_of_Admission="01/10/2019",
        Date_of_Testing="03/10/2019", Date_of_Discharge="08/10/2019", Test_Type="NS1",
    )
    cells.update(values)
    return make_record(row_index, **cells)


def mixed_batch():
    return [
        golden_record(0),
        golden_record(1, Date_of_Testing="3112019", Age="6 months", Sex="F"),
        golden_record(2, Date_of_Testing="", Date_of_Admission="05/10/2019"),
        golden_record(3, Date_of_Testing="123456789012",
                      Address="s/o Mohan Singh, Village Nowhere"),
        golden_record(4, Date_of_Testing="43741", Age="", Sex="27/M"),
        golden_record(5, Date_of_Testing="2919", Sex="child"),
    ]


def test_empty_batch():
    records, audit, items = run_pipeline([], CTX, make_params(), anon_cfg=make_config())
    assert records == []
    assert audit.verdicts == []
    assert items == []
    assert summarize(audit)["n_records"] == 0


def test_golden_record():
    records, audit, items = make_cleaner().run([golden_record()])
    assert items == []
    assert len(records) == 1

    clean = records[0]
    assert clean.test_date == datetime.date(2019, 10, 3)
    assert clean.test_date_provenance == Provenance.PARSED
    assert clean.dates[Role.ADMISSION_DATE] == datetime.date(2019, 10, 1)
    assert clean.age_years == 34
    assert clean.sex == Sex.MALE
    assert clean.location.settlement == "Khanna"
    assert clean.location.district == "Ludhiana"
    assert len(clean.anon_id) == 16

    # one verdict per mapped cell, none queued
    assert len(audit.verdicts) == 8
    actions = {verdict.action for verdict in audit.verdicts}
    assert actions <= {Action.UNCHANGED, Action.AUTO_CORRECTED, Action.DELETED}
    headers = [verdict.role.source_header for verdict in audit.verdicts]
    assert headers == ["Patient Name", "Contact No", "Age", "Sex", "Address",
                       "Date of Admission", "Date of Testing", "Date of Discharge"]


def test_configuration_errors_abort_first(mocker):
    params = make_params()
    params["anonymizer"]["key_env"] = "LINELIST_TEST_UNSET_KEY"
    mocker.patch.dict(os.environ, {}, clear=False)
    os.environ.pop("LINELIST_TEST_UNSET_KEY", None)
    spy = mocker.patch("linelist_cleaning.pipeline_audit.RecordCleaner.clean")
    with pytest.raises(ValueError, match="LINELIST_TEST_UNSET_KEY"):
        run_pipeline([golden_record()], CTX, params)
    spy.assert_not_called()


def test_verdict_completeness():
    batch = mixed_batch()
    records, audit, items = make_cleaner().run(batch)
    assert len(audit.verdicts) == len(batch) * 8
    keys = [verdict.key for verdict in audit.verdicts]
    assert len(set(keys)) == len(keys)
    assert [verdict.row_index for verdict in audit.verdicts] == sorted(
        verdict.row_index for verdict in audit.verdicts)


def test_mixed_batch():
    records, audit, items = make_cleaner().run(mixed_batch())

    # D10 is queued with both readings
    d10 = audit.get((1, "Date of Testing"))
    assert d10.action == Action.REVIEW_QUEUED
    assert d10.rule_id == "D10"
    assert d10.candidates == ("2019-11-03", "2019-01-31")
    assert records[1].test_date is None
    assert records[1].age_years == 0.5
    assert records[1].sex == Sex.FEMALE

    # missing test date imputed from admission + 2 days
    imputed = audit.get((2, "Date of Testing"))
    assert (imputed.action, imputed.rule_id, imputed.after) == (
        Action.AUTO_CORRECTED, "M01", "2019-10-07")
    assert records[2].test_date_provenance == Provenance.IMPUTED

    # deleted date imputed, the chain keeps the deletion
    assert audit.get((3, "Date of Testing")).rule_id == "D01>M01"
    assert records[3].test_date == datetime.date(2019, 10, 3)
    assert audit.get((3, "Address")).rule_id == "L03"
    assert records[3].location is None

    # serial date and age recovered from the sex column
    assert records[4].test_date == datetime.date(2019, 10, 3)
    assert audit.get((4, "Age")).rule_id == "A05"
    assert records[4].age_years == 27
    assert records[4].sex == Sex.MALE

    assert records[5].test_date == datetime.date(2019, 9, 2)
    assert audit.get((5, "Sex")).rule_id == "S03"

    # review items are exactly the queued verdicts
    assert sorted(item.key for item in items) == sorted(
        verdict.key for verdict in audit.verdicts if verdict.action == Action.REVIEW_QUEUED)
    assert all(item.resolution == Resolution.PENDING for item in items)


def test_no_identifier_leaks():
    records, audit, _ = make_cleaner().run(mixed_batch())
    with tempfile.TemporaryDirectory() as temp_dir:
        csv_path = os.path.join(temp_dir, "cleaned.csv")
        audit_path = os.path.join(temp_dir, "audit.jsonl")
        write_clean_csv(csv_path, records)
        audit.write_jsonl(audit_path)
        for path in (csv_path, audit_path):
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
            for row_index in range(6):
                assert "Ram Lal {}".format(row_index) not in text
                assert "98140{:05d}".format(row_index) not in text


def test_ingest_verdicts_are_redacted():
    ingest = [
        CellVerdict(7, ROW_COLUMN, Phase.SCREENED, "malformed-row", Action.REVIEW_QUEUED,
                    "1,,,,34,M,x,y,z,w,v"),
        CellVerdict(0, ColumnRole(Role.NAME, "Patient Name"), Phase.SCREENED,
                    "invalid-encoding", Action.REVIEW_QUEUED, "R\ufffdm"),
    ]
    _, audit, items = make_cleaner().run([golden_record()], ingest)
    assert audit.n_quarantined == 1
    assert all("Ram" not in verdict.before for verdict in audit.ingest_verdicts)
    # quarantined rows keep the text ingest left after blanking identifiers
    assert audit.ingest_verdicts[0].before == "1,,,,34,M,x,y,z,w,v"
    assert audit.ingest_verdicts[1].before == REDACTED
    # quarantine is reported, never queued as a cell review
    assert items == []


def test_rule_counters():
    _, audit, _ = make_cleaner().run(mixed_batch())
    counters = audit.rule_counters()
    for rule_id, counts in counters.items():
        assert counts["screened"] == (counts["auto"] + counts["manual"] + counts["deleted"]
                                      + counts["unchanged"] + counts["pending"]), rule_id
    assert counters["D10"]["pending"] == 1
    assert counters["D01"]["auto"] == 1
    assert counters["M01"]["auto"] == 2
    assert counters["I01"]["deleted"] == 12


def test_summary():
    records, audit, _ = make_cleaner().run([golden_record(i) for i in range(4)])
    summary = summarize(audit)
    assert summary["year"] == 2019
    assert summary["variables"]["TestDate"]["percent_extracted"] == 100.0
    assert summary["variables"]["Age"]["total"] == 4
    assert "Name" not in summary["variables"]
    assert summary["offsets"]["mean_admission_to_test"] == 2.0
    assert summary["automation"]["anomalous"] == 0

    # the summary survives json and renders as aligned text
    json.dumps(summary)
    text = render_summary_text(summary)
    assert "Rule counters" in text
    assert "TestDate" in text


def test_summary_parsed_only_share():
    batch = [golden_record(0), golden_record(1), golden_record(2, Date_of_Testing=""),
             golden_record(3, Date_of_Testing="", Date_of_Admission="",
                           Date_of_Discharge="")]
    _, audit, _ = make_cleaner().run(batch)
    test_dates = summarize(audit)["variables"]["TestDate"]
    assert test_dates["extracted"] == 2
    assert test_dates["imputed"] == 1
    assert test_dates["missing"] == 1
    assert test_dates["percent_extracted"] == 75.0
    assert test_dates["percent_parsed_only"] == 50.0

    # without imputation the imputed share disappears
    _, audit, _ = make_cleaner(make_params(impute=False)).run(batch)
    test_dates = summarize(audit)["variables"]["TestDate"]
    assert test_dates["imputed"] == 0
    assert test_dates["percent_extracted"] == 50.0


def test_imputation_over_batch():
    # 80 complete rows two days apart, 20 rows missing the test date
    batch = [golden_record(i) for i in range(80)]
    batch += [golden_record(80 + i, Date_of_Testing="",
                            Date_of_Admission="{:02d}/09/2019".format(i + 1))
              for i in range(20)]
    records, audit, items = make_cleaner().run(batch)
    assert items == []
    assert audit.offsets.mean_admission_to_test == 2.0

    for i, clean in enumerate(records[80:]):
        assert clean.test_date == datetime.date(2019, 9, i + 1) + datetime.timedelta(days=2)
        assert clean.test_date_provenance == Provenance.IMPUTED
    assert all(clean.test_date_provenance == Provenance.PARSED for clean in records[:80])

    test_dates = summarize(audit)["variables"]["TestDate"]
    assert (test_dates["extracted"], test_dates["imputed"]) == (80, 20)
    assert test_dates["percent_parsed_only"] == 80.0


def test_automation_shares():
    batch = [golden_record(0, Date_of_Testing="43745"),
             golden_record(1, Date_of_Testing="3112019"),
             golden_record(2, Date_of_Testing="9102019"),
             golden_record(3, Date_of_Testing="12")]
    _, audit, _ = make_cleaner().run(batch)
    automation = audit.automation()
    assert automation["anomalous"] == 4
    assert automation["review"] == 1
    assert automation["percent_automated"] == 75.0
    assert automation["percent_review"] == 25.0


def test_apply_resolutions():
    cleaner = make_cleaner()
    records, audit, items = cleaner.run([golden_record(0, Date_of_Testing="3112019")])
    assert len(items) == 1
    item = items[0]
    assert item.candidates == ["2019-11-03", "2019-01-31"]

    item.accept(1)
    applied = apply_resolutions(items, records, audit, cleaner)
    assert len(applied) == 1
    assert records[0].test_date == datetime.date(2019, 11, 3)
    assert records[0].test_date_provenance == Provenance.PARSED
    verdict = audit.get(item.key)
    assert verdict.action == Action.MANUALLY_CORRECTED
    assert verdict.rule_id == "D10"
    assert audit.rule_counters()["D10"] == {
        "screened": 1, "auto": 0, "manual": 1, "deleted": 0, "unchanged": 0, "pending": 0}

    # applying twice changes nothing
    assert apply_resolutions(items, records, audit, cleaner) == []


def test_apply_resolutions_invalid_manual_value():
    cleaner = make_cleaner()
    records, audit, items = cleaner.run([golden_record(0, Date_of_Testing="3112019")])
    items[0].resolve(Resolution.MANUAL_VALUE, "31022019")
    assert apply_resolutions(items, records, audit, cleaner) == []
    assert items[0].resolution == Resolution.PENDING
    assert "31022019" in items[0].note
    assert audit.get(items[0].key).action == Action.REVIEW_QUEUED
    assert records[0].test_date is None


def test_apply_resolutions_delete():
    cleaner = make_cleaner()
    records, audit, items = cleaner.run([golden_record(0, Age="135")])
    assert [item.verdict.rule_id for item in items] == ["A03"]
    items[0].resolve(Resolution.DELETED)
    apply_resolutions(items, records, audit, cleaner)
    assert records[0].age_years is None
    assert audit.rule_counters()["A03"]["deleted"] == 1
    assert audit.get(items[0].key).action == Action.DELETED


def test_lossy_dates_are_deleted_and_queued():
    cleaner = make_cleaner()
    batch = [golden_record(0, Date_of_Testing="12"),
             golden_record(1, Date_of_Discharge="44444")]
    records, audit, items = cleaner.run(batch)
    by_key = {item.key: item for item in items}
    assert set(by_key) == {(0, "Date of Testing"), (1, "Date of Discharge")}
    assert audit.pending() == []

    # the deletion, and the imputation that followed it, hold until review
    test_date = by_key[(0, "Date of Testing")]
    assert (test_date.verdict.action, test_date.verdict.rule_id) == (
        Action.AUTO_CORRECTED, "D21>M01")
    assert records[0].test_date == datetime.date(2019, 10, 3)
    assert records[0].test_date_provenance == Provenance.IMPUTED
    discharge = by_key[(1, "Date of Discharge")]
    assert (discharge.verdict.action, discharge.verdict.rule_id) == (Action.DELETED, "D04")
    assert Role.DISCHARGE_DATE not in records[1].dates
    assert audit.rule_counters()["D04"]["deleted"] == 1

    test_date.resolve(Resolution.MANUAL_VALUE, "05/10/2019")
    discharge.resolve(Resolution.DELETED)
    applied = apply_resolutions(items, records, audit, cleaner)
    assert len(applied) == 2
    assert records[0].test_date == datetime.date(2019, 10, 5)
    assert records[0].test_date_provenance == Provenance.PARSED
    corrected = audit.get(test_date.key)
    assert (corrected.action, corrected.rule_id) == (Action.MANUALLY_CORRECTED, "D21")
    confirmed = audit.get(discharge.key)
    assert confirmed.action == Action.DELETED
    assert "deletion confirmed in review" in confirmed.note
    assert Role.DISCHARGE_DATE not in records[1].dates


def test_apply_resolutions_other_roles():
    cleaner = make_cleaner()
    batch = [golden_record(0, Sex="child", Address="Bhadla"),
             golden_record(1, Age="none given")]
    records, audit, items = cleaner.run(batch)
    by_rule = {item.verdict.rule_id: item for item in items}
    assert set(by_rule) == {"S03", "L05", "A04"}
    assert by_rule["L05"].candidates == ["Bhadla, Samrala, Ludhiana", "Bhadla, Rajpura, Patiala"]

    by_rule["S03"].resolve(Resolution.MANUAL_VALUE, "female")
    by_rule["L05"].accept(2)
    by_rule["A04"].resolve(Resolution.MANUAL_VALUE, "not an age")
    applied = apply_resolutions(items, records, audit, cleaner)
    assert len(applied) == 2
    assert records[0].sex == Sex.FEMALE
    assert records[0].location.block == "Rajpura"
    assert by_rule["A04"].resolution == Resolution.PENDING
    assert records[1].age_years is None


def test_review_item_transitions():
    verdict = CellVerdict(0, TEST_COLUMN, Phase.DIAGNOSED, "D11", Action.REVIEW_QUEUED,
                          "1032019", candidates=("2019-03-01", "2019-03-10"))
    item = ReviewItem(verdict)
    with pytest.raises(ValueError):
        item.resolve(Resolution.ACCEPTED, "2019-12-25")
    with pytest.raises(ValueError):
        item.resolve(Resolution.MANUAL_VALUE, "  ")
    with pytest.raises(ValueError):
        item.resolve(Resolution.PENDING)
    with pytest.raises(ValueError):
        item.accept(3)

    item.accept(2)
    assert item.value == "2019-03-10"
    assert item.is_terminal()

    # terminal states are immutable
    with pytest.raises(ValueError):
        item.resolve(Resolution.DELETED)
    assert ReviewItem.from_dict(item.to_dict()) == item


def test_sidecar_last_line_wins():
    verdict = CellVerdict(0, TEST_COLUMN, Phase.DIAGNOSED, "D10", Action.REVIEW_QUEUED,
                          "3112019", candidates=("2019-11-03", "2019-01-31"))
    with tempfile.TemporaryDirectory() as temp_dir:
        path = os.path.join(temp_dir, "review_pending.jsonl")
        write_review_items(path, [ReviewItem(verdict)])
        first = ReviewItem(verdict)
        first.accept(2)
        append_resolution(path, first)
        second = ReviewItem(verdict)
        second.accept(1)
        append_resolution(path, second)

        items = load_review_items(path)
        assert len(items) == 1
        assert items[0].value == "2019-11-03"


def test_replay_is_byte_identical():
    batch = [golden_record(0, Date_of_Testing="3112019"), golden_record(1, Age="135"),
             golden_record(2)]

    with tempfile.TemporaryDirectory() as temp_dir:
        sidecar = os.path.join(temp_dir, "review_pending.jsonl")
        cleaner = make_cleaner()
        records, audit, items = cleaner.run(batch)
        write_review_items(sidecar, items)
        items[0].accept(1)
        items[1].resolve(Resolution.MANUAL_VALUE, "35")
        for item in items:
            append_resolution(sidecar, item)
        apply_resolutions(items, records, audit, cleaner)
        first_csv = os.path.join(temp_dir, "first.csv")
        first_audit = os.path.join(temp_dir, "first.jsonl")
        write_clean_csv(first_csv, records)
        audit.write_jsonl(first_audit)

        # fresh run, decisions replayed from the sidecar
        cleaner = make_cleaner()
        records, audit, items = cleaner.run(batch)
        assert attach_resolutions(items, load_review_items(sidecar)) == 2
        apply_resolutions(items, records, audit, cleaner)
        second_csv = os.path.join(temp_dir, "second.csv")
        second_audit = os.path.join(temp_dir, "second.jsonl")
        write_clean_csv(second_csv, records)
        audit.write_jsonl(second_audit)

        for first, second in ((first_csv, second_csv), (first_audit, second_audit)):
            with open(first, "rb") as f1, open(second, "rb") as f2:
                assert f1.read() == f2.read()
        assert audit.pending() == []


def test_write_clean_csv():
    records, _, _ = make_cleaner().run([golden_record(), golden_record(1, Age="")])
    with tempfile.TemporaryDirectory() as temp_dir:
        path = os.path.join(temp_dir, "cleaned.csv")
        write_clean_csv(path, records)
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    assert lines[0] == ",".join(OUTPUT_COLUMNS)
    assert lines[1].endswith("2019-10-03,Parsed,34,Male,Ludhiana,,Khanna,,")
    assert ",Parsed,,Male," in lines[2]


def test_audit_jsonl_round_trip():
    _, audit, _ = make_cleaner().run(mixed_batch())
    with tempfile.TemporaryDirectory() as temp_dir:
        path = os.path.join(temp_dir, "audit.jsonl")
        audit.write_jsonl(path)
        loaded = AuditLog.read_jsonl(path, year=2019)
    assert loaded.verdicts == audit.verdicts
    assert loaded.n_records == 6
    assert loaded.rule_counters() == audit.rule_counters()


def test_geocoding_offline():
    params = make_params()
    geocoder = OfflineGeocoder.from_json(params["geocoder"]["stub_path"])
    cache = GeocodeCache()
    records, audit, items = make_cleaner(params, geocoder=geocoder, cache=cache).run(
        [golden_record(0), golden_record(1, Address="Nowhere")])
    assert (records[0].location.latitude, records[0].location.longitude) == (30.70, 76.22)
    assert "khanna ludhiana" in cache
    assert records[1].location is None
    assert [item.verdict.rule_id for item in items] == ["L03"]


def test_geocoding_unavailable(mocker):
    geocoder = mocker.Mock()
    geocoder.lookup.side_effect = GeocodingError("quota exceeded", retry_after=30)
    cache = GeocodeCache({"sunam sangrur": (30.13, 75.80)})
    batch = [golden_record(0), golden_record(1, Address="Sunam"),
             golden_record(2, Address="Bhadla, Samrala")]
    records, audit, items = make_cleaner(geocoder=geocoder, cache=cache).run(batch)

    # the client is not called again after it refused
    assert geocoder.lookup.call_count == 1

    # cached locations still get coordinates
    assert records[1].location.latitude == 30.13

    for row_index in (0, 2):
        verdict = audit.get((row_index, "Address"))
        assert verdict.action == Action.REVIEW_QUEUED
        assert verdict.rule_chain[-1] == "L06"
        assert "retry after 30 s" in verdict.note
        # the match waits in the candidate, the row has no location until review
        assert records[row_index].location is None
        assert len(verdict.candidates) == 1
    assert audit.get((0, "Address")).candidates == ("Khanna, Ludhiana",)
    assert len(items) == 2
    assert audit.per_variable_summary()["Address"]["review"] == 2

    cleaner = make_cleaner(geocoder=geocoder, cache=cache)
    items[0].accept(1)
    apply_resolutions(items, records, audit, cleaner)
    assert records[0].location.settlement == "Khanna"
    assert records[0].location.latitude is None
    assert records[2].location is None


def test_parallel_matches_sequential():
    batch = [golden_record(i, Date_of_Testing=["3112019", "", "43745", "2918"][i % 4])
             for i in range(12)]
    sequential, audit, _ = make_cleaner().run(batch)
    parallel_cleaner = make_cleaner(make_params(workers=2, chunk_size=5))
    parallel, parallel_audit, _ = parallel_cleaner.run(batch)
    assert parallel == sequential
    assert parallel_audit.verdicts == audit.verdicts


def test_location_cleared_on_deleted_address():
    cleaner = make_cleaner()
    records, audit, items = cleaner.run([golden_record(0, Address="Nowhere")])
    items[0].resolve(Resolution.DELETED)
    apply_resolutions(items, records, audit, cleaner)
    assert records[0].location is None
