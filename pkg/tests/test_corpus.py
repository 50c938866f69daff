import io
import json
import logging

import numpy as np
import pytest

from codonmpnn.corpus import (
    DatasetSplit,
    LengthMismatch,
    MultiChainError,
    NonFiniteCoordinate,
    SchemaError,
    SplitError,
    UnknownId,
    apply_split,
    filter_plddt,
    read_records,
    record_from_json,
    write_records,
)
from codonmpnn.synthetic import random_record


def line(**fields):
    base = {"id": "p1", "coords": np.zeros((2, 4, 3)).tolist(), "codons": "AUGUGG", "tax_id": 9606}
    base.update(fields)
    return base


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    recs = [random_record(f"r{i}", 5 + i, rng, tax_id=i) for i in range(4)]
    path = tmp_path / "recs.jsonl"
    write_records(recs, path)
    back = list(read_records(path))
    assert len(back) == 4
    assert all(a.same_as(b) for a, b in zip(recs, back))


def test_read_records_is_lazy():
    good = json.dumps(line()) + "\n"
    stream = io.StringIO(good + "{not json\n")
    it = read_records(stream)
    assert next(it).id == "p1"
    with pytest.raises(SchemaError, match="line 2"):
        next(it)


def test_blank_lines_skipped():
    stream = io.StringIO("\n" + json.dumps(line()) + "\n\n")
    assert [r.id for r in read_records(stream)] == ["p1"]


def test_dna_codons_normalized():
    rec = record_from_json(line(codons="ATGTGG"))
    assert rec.codons.nucleotides == "AUGUGG"
    assert rec.amino_acids() == "MW"


@pytest.mark.parametrize(
    "fields,exc",
    [
        ({"codons": "AUG"}, LengthMismatch),
        ({"codons": "AUGUG"}, SchemaError),
        ({"codons": "AXGUGG"}, SchemaError),
        ({"coords": [[[0, 0]] * 4] * 2}, SchemaError),
        ({"coords": [[[0, 0, 0]] * 3] * 2}, SchemaError),
        ({"coords": [[[float("nan"), 0, 0]] * 4] * 2}, NonFiniteCoordinate),
        ({"chains": ["A", "B"]}, MultiChainError),
        ({"tax_id": "human"}, SchemaError),
        ({"plddt": [0.9]}, LengthMismatch),
    ],
)
def test_validation_errors(fields, exc):
    with pytest.raises(exc):
        record_from_json(line(**fields))


def test_missing_field():
    obj = line()
    del obj["coords"]
    with pytest.raises(SchemaError, match="coords"):
        record_from_json(obj)


def test_single_chain_key_allowed():
    assert record_from_json(line(chains=["A"])).id == "p1"


def test_coords_read_only():
    rec = record_from_json(line())
    with pytest.raises(ValueError):
        rec.coords[0, 0, 0] = 1.0


def test_plddt_scale_normalized():
    assert record_from_json(line(plddt=[95.0, 85.0])).mean_plddt == pytest.approx(0.90)
    assert record_from_json(line(plddt=[0.95, 0.85])).mean_plddt == pytest.approx(0.90)


def test_filter_plddt_strict_threshold(caplog):
    recs = [
        record_from_json(line(id="hi", plddt=[0.95, 0.95])),
        record_from_json(line(id="eq", plddt=[0.9, 0.9])),
        record_from_json(line(id="lo", plddt=[0.5, 0.6])),
        record_from_json(line(id="none")),
    ]
    with caplog.at_level(logging.WARNING):
        res = filter_plddt(recs)
    assert [r.id for r in res.kept] == ["hi", "none"]
    assert res.dropped == 2
    assert res.missing_plddt == 1
    assert "no pLDDT" in caplog.text


def test_split_disjoint_and_ordered():
    recs = [record_from_json(line(id=i)) for i in "abcde"]
    split = DatasetSplit(train=("d", "a"), val=("b",), test=("e",))
    train, val, test = apply_split(recs, split)
    assert [r.id for r in train] == ["a", "d"]
    assert [r.id for r in val] == ["b"]
    assert [r.id for r in test] == ["e"]


def test_split_overlap_and_unknown():
    with pytest.raises(SplitError):
        DatasetSplit(train=("a",), val=("a",))
    recs = [record_from_json(line(id="a"))]
    with pytest.raises(UnknownId) as info:
        apply_split(recs, DatasetSplit(train=("a", "zz")))
    assert info.value.missing == ["zz"]
