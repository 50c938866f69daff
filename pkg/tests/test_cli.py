import json

import numpy as np
import pytest

from codonmpnn.cli import main
from codonmpnn.corpus import write_records
from codonmpnn.genetic_code import encode_triplet
from codonmpnn.synthetic import back_translate, random_record
from codonmpnn.taxonomy import format_taxdump

TINY = ["--hidden", "8", "--layers", "1", "--knn", "6", "--batch-size", "2", "--val-every", "2"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(0)
    recs = [random_record(f"r{i}", 9, rng, tax_id=4 + i % 2) for i in range(4)]
    write_records(recs, d / "recs.jsonl")
    (d / "nodes.dmp").write_text(format_taxdump({1: 1, 2: 1, 3: 1, 4: 2, 5: 3}))
    assert main(["partition", "--nodes", str(d / "nodes.dmp"), "-k", "2", "--out", str(d / "clusters.tsv")]) == 0
    args = ["train", "--data", str(d / "recs.jsonl"), "--val", str(d / "recs.jsonl"), "--clusters", str(d / "clusters.tsv")]
    assert main(args + ["--out", str(d / "run"), "--steps", "4", *TINY]) == 0
    return d, recs


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    assert "CMPN v1" in out and "CMPF v1" in out


def test_unknown_flag_is_error():
    with pytest.raises(SystemExit) as info:
        main(["partition", "--nodes", "x", "--out", "-", "--bogus"])
    assert info.value.code == 2


def test_partition_minimal(tmp_path, capsys):
    (tmp_path / "n.dmp").write_text(format_taxdump({1: 1, 2: 1}))
    assert main(["partition", "--nodes", str(tmp_path / "n.dmp"), "-k", "1", "--out", "-"]) == 0
    captured = capsys.readouterr()
    assert captured.out.splitlines() == ["#k=1\t#n=2", "1\t0", "2\t0"]
    assert "hash=" in captured.err


def test_partition_hand_traced_fixture(tmp_path):
    (tmp_path / "n.dmp").write_text(format_taxdump({1: 1, 2: 1, 3: 1, 4: 2, 5: 2, 6: 3, 7: 3}))
    out = tmp_path / "c.tsv"
    assert main(["partition", "--nodes", str(tmp_path / "n.dmp"), "-k", "2", "--out", str(out), "--stats", str(tmp_path / "s.json")]) == 0
    rows = dict(line.split("\t") for line in out.read_text().splitlines()[1:])
    assert rows == {"1": "0", "2": "0", "3": "1", "4": "0", "5": "0", "6": "1", "7": "1"}
    assert json.loads((tmp_path / "s.json").read_text())["max"] == 4


def test_partition_errors(tmp_path, caplog):
    assert main(["partition", "--nodes", str(tmp_path / "missing.dmp"), "--out", "-"]) == 2
    assert "missing.dmp" in caplog.text
    (tmp_path / "bad.dmp").write_text("1\t|\t1\t|\tno rank\t|\ngarbage\n")
    assert main(["partition", "--nodes", str(tmp_path / "bad.dmp"), "--out", "-"]) == 2
    assert "line 2" in caplog.text


def test_train_outputs(workspace):
    d, _ = workspace
    names = {p.name for p in (d / "run").iterdir()}
    assert {"initial.cmpn", "last.cmpn", "best.cmpn", "metrics.jsonl"} <= names
    assert len((d / "run" / "metrics.jsonl").read_text().splitlines()) == 2


def test_train_zero_steps(workspace, tmp_path):
    d, _ = workspace
    assert main(["train", "--data", str(d / "recs.jsonl"), "--out", str(tmp_path / "z"), "--steps", "0", *TINY]) == 0
    assert sorted(p.name for p in (tmp_path / "z").iterdir()) == ["initial.cmpn", "last.cmpn", "metrics.jsonl"]


def test_train_corrupt_line(workspace, tmp_path, caplog):
    d, _ = workspace
    bad = tmp_path / "bad.jsonl"
    bad.write_text((d / "recs.jsonl").read_text().splitlines()[0] + "\n{oops\n")
    assert main(["train", "--data", str(bad), "--out", str(tmp_path / "z"), "--steps", "1", *TINY]) == 3
    assert "line 2" in caplog.text


def sample_args(d, out, *extra):
    return ["sample", "--ckpt", str(d / "run" / "last.cmpn"), "--data", str(d / "recs.jsonl"), "--clusters", str(d / "clusters.tsv"), "--out", str(out), *extra]


def test_sample_deterministic_and_schema(workspace, tmp_path):
    d, _ = workspace
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(sample_args(d, a, "-n", "3", "--seed", "7", "--temperature", "1.0")) == 0
    assert main(sample_args(d, b, "-n", "3", "--seed", "7", "--temperature", "1.0")) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = [json.loads(x) for x in a.read_text().splitlines()]
    assert len(rows) == 12
    assert set(rows[0]) == {"record_id", "sample_idx", "codons", "aa", "logp"}


def test_sample_taxon_modes(workspace, tmp_path, caplog):
    d, _ = workspace
    assert main(sample_args(d, tmp_path / "n.jsonl", "--taxon", "none")) == 0
    assert main(sample_args(d, tmp_path / "t.jsonl", "--taxon", "4")) == 0
    assert main(sample_args(d, tmp_path / "u.jsonl", "--taxon", "999")) == 0
    assert "unknown" in caplog.text
    assert main(sample_args(d, tmp_path / "s.jsonl", "--taxon", "999", "--strict-taxon")) == 5


def test_sample_fixed(workspace, tmp_path):
    d, _ = workspace
    out = tmp_path / "f.jsonl"
    assert main(sample_args(d, out, "-n", "3", "--fixed", "0=AUG", "--temperature", "2.0")) == 0
    for row in map(json.loads, out.read_text().splitlines()):
        assert row["codons"][:3] == "AUG"


def test_score(workspace, tmp_path):
    d, recs = workspace
    out = tmp_path / "s.jsonl"
    argv = ["score", "--ckpt", str(d / "run" / "last.cmpn"), "--data", str(d / "recs.jsonl"), "--out", str(out), "--clusters", str(d / "clusters.tsv")]
    assert main(argv) == 0
    rows = [json.loads(x) for x in out.read_text().splitlines()]
    assert [r["record_id"] for r in rows] == [r.id for r in recs]
    assert all(r["logp"] < 0 for r in rows)


def test_eval_report_self_check(workspace, tmp_path):
    d, _ = workspace
    report, tsv = tmp_path / "r.json", tmp_path / "r.tsv"
    argv = ["eval", "--ckpt", str(d / "run" / "last.cmpn"), "--data", str(d / "recs.jsonl"), "--report", str(report), "--tsv", str(tsv), "--self-check"]
    assert main(argv) == 0
    rep = json.loads(report.read_text())
    assert rep["self_check"] is True
    per = rep["per_aa"]
    weighted = sum(v["codon_rec"] * v["support"] for v in per.values()) / sum(v["support"] for v in per.values())
    assert weighted == pytest.approx(rep["codon_recovery"], abs=1e-12)
    assert tsv.read_text().startswith("aa\tcodon_rec")


def test_eval_pairs_rejects_nonsynonymous(workspace, tmp_path, caplog):
    d, recs = workspace
    wt = recs[0].codons.nucleotides
    first = encode_triplet(wt[:3]).amino_acid
    other = "AUG" if first != "M" else "UGG"
    pairs = tmp_path / "p.jsonl"
    good = {"id": "ok", "wt_codons": wt, "mut_codons": back_translate(recs[0].amino_acids(), "highest").nucleotides, "wt_fitness": 1.0, "mut_fitness": 0.0, "structure_id": "r0"}
    bad = {"id": "bad-pair", "wt_codons": wt, "mut_codons": other + wt[3:], "wt_fitness": 1.0, "mut_fitness": 0.0, "structure_id": "r0"}
    base = ["eval", "--ckpt", str(d / "run" / "last.cmpn"), "--data", str(d / "recs.jsonl"), "--pairs", str(pairs), "--report", str(tmp_path / "r.json")]
    pairs.write_text(json.dumps(good) + "\n")
    assert main(base) == 0
    assert json.loads((tmp_path / "r.json").read_text())["pairs"] == 1
    pairs.write_text(json.dumps(bad) + "\n")
    assert main(base) == 3
    assert "bad-pair" in caplog.text
