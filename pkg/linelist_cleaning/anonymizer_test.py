import hashlib

import numpy as np
import pytest

from linelist_cleaning.anonymizer import (
    REDACTED, AnonConfig, identifier_material, pseudonymize, strip_identifiers
)
from linelist_cleaning.core_model import Action, ConfigurationError, RawRecord, Role
from linelist_cleaning.core_model_test import make_record
from linelist_cleaning.corpus_synth import FIRST_NAMES, LAST_NAMES

TEST_KEY = b"0123456789abcdef-test"


def make_config(key=TEST_KEY, **kwargs):
    # low work factor keeps the tests fast
    kwargs.setdefault("n", 16)
    kwargs.setdefault("r", 1)
    return AnonConfig(secret_key=key, **kwargs)


def test_anon_config():
    with pytest.raises(ConfigurationError):
        make_config(key=b"short")
    with pytest.raises(ConfigurationError):
        make_config(key=b"")
    with pytest.raises(ConfigurationError):
        make_config(id_length=8)
    with pytest.raises(ConfigurationError):
        make_config(n=1000)
    with pytest.raises(ConfigurationError):
        make_config(salt_scope="global")

    # the key never shows up in the repr
    assert "0123456789" not in repr(make_config())


def test_anon_config_from_params():
    params = {"key_env": "TEST_ANON_KEY", "n": 16, "r": 1, "p": 1, "id_length": 20,
              "salt_scope": "fixed", "fixed_salt": "punjab"}
    cfg = AnonConfig.from_params(params, environ={"TEST_ANON_KEY": TEST_KEY.decode()})
    assert cfg.id_length == 20
    assert cfg.salt("a.csv", 2019) == cfg.salt("b.csv", 2020)

    with pytest.raises(ConfigurationError, match="TEST_ANON_KEY"):
        AnonConfig.from_params(params, environ={})


def test_strip_identifiers():
    record = make_record(Patient_Name="Ram Lal", Contact_No="9814000000", Age="34")
    stripped, verdicts = strip_identifiers(record)
    assert stripped.value(Role.NAME) == ""
    assert stripped.value(Role.CONTACT) == ""
    assert stripped.value(Role.AGE) == "34"
    assert [v.action for v in verdicts] == [Action.DELETED, Action.DELETED]

    # removed values are never copied into verdicts
    for verdict in verdicts:
        assert verdict.before == REDACTED
        assert "Ram" not in str(verdict.to_dict())
        assert "9814" not in str(verdict.to_dict())

    # blank name is unchanged
    stripped, verdicts = strip_identifiers(make_record(Contact_No="98"))
    assert [v.action for v in verdicts] == [Action.UNCHANGED, Action.DELETED]

    # no identifier columns mapped
    record = make_record(Age="34")
    bare = RawRecord(0, {c: v for c, v in record.cells.items()
                         if c.role not in (Role.NAME, Role.CONTACT)}, "batch.csv")
    stripped, verdicts = strip_identifiers(bare)
    assert stripped == bare
    assert verdicts == []


def test_pseudonymize():
    cfg = make_config()
    record = make_record(Patient_Name="Ram Lal", Contact_No="9814000000")
    anon_id = pseudonymize(record, cfg, 2019)
    assert len(anon_id) == 16
    int(anon_id, 16)

    # deterministic and keyed
    assert pseudonymize(record, cfg, 2019) == anon_id
    assert pseudonymize(record, make_config(key=b"another-secret-key-1"), 2019) != anon_id

    # one character differs
    other = make_record(Patient_Name="Ram Lal", Contact_No="9814000001")
    assert pseudonymize(other, cfg, 2019) != anon_id

    # batch salt separates years, fixed salt links them
    assert pseudonymize(record, cfg, 2020) != anon_id
    fixed = make_config(salt_scope="fixed", fixed_salt="punjab")
    assert pseudonymize(record, fixed, 2019) == pseudonymize(record, fixed, 2020)

    # longer ids
    assert len(pseudonymize(record, make_config(id_length=33), 2019)) == 33

    with pytest.raises(ConfigurationError):
        pseudonymize(record, None, 2019)


def test_pseudonymize_blank_identifiers():
    cfg = make_config()
    first = make_record(0, Age="34")
    second = make_record(1, Age="34")
    assert identifier_material(first) != identifier_material(second)
    assert pseudonymize(first, cfg, 2019) != pseudonymize(second, cfg, 2019)

    # identical identifier tuples share an id whatever the other cells hold
    first = make_record(0, Patient_Name="Ram", Age="34")
    second = make_record(1, Patient_Name="Ram", Age="35")
    assert pseudonymize(first, cfg, 2019) == pseudonymize(second, cfg, 2019)


def test_pseudonymize_memo(mocker):
    cfg = make_config()
    memo = {}
    spy = mocker.spy(hashlib, "scrypt")
    records = [make_record(i, Patient_Name="Ram", Contact_No="98") for i in range(5)]
    ids = {pseudonymize(record, cfg, 2019, memo) for record in records}
    assert len(ids) == 1
    assert spy.call_count == 1


def test_pseudonyms_over_randomized_corpus():
    rng = np.random.default_rng(17)
    records = []
    for i in range(1000):
        name = "{} {}".format(FIRST_NAMES[rng.integers(len(FIRST_NAMES))],
                              LAST_NAMES[rng.integers(len(LAST_NAMES))])
        contact = "98{:08d}".format(rng.integers(10 ** 8))
        records.append(make_record(i, Patient_Name=name, Contact_No=contact))
    distinct = {identifier_material(record) for record in records}

    cfg = make_config()
    ids = [pseudonymize(record, cfg, 2019) for record in records]
    assert len(set(ids)) == len(distinct)

    # deterministic across calls and memo tables
    memo = {}
    assert [pseudonymize(record, make_config(), 2019, memo) for record in records] == ids

    # another key changes every id
    other = make_config(key=b"fedcba9876543210-test")
    other_ids = [pseudonymize(record, other, 2019) for record in records]
    assert all(a != b for a, b in zip(ids, other_ids))
    assert not set(ids) & set(other_ids)
