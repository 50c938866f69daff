import io
import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from codonmpnn.evaluate import (
    InvalidPair,
    LengthMismatch,
    PairEvalResult,
    PairRow,
    RecoveryReport,
    SynonymousPair,
    aa_recovery,
    codon_recovery,
    naive_codon_recovery,
    oracle_codon_recovery,
    pair_from_json,
    read_pairs,
    select_top_pairs,
    synonymous_pair_eval,
)
from codonmpnn.genetic_code import CodonSeq, build_usage_table, encode_triplet
from codonmpnn.model import CodonMPNN, ModelConfig
from codonmpnn.synthetic import back_translate, random_backbone


def seq(s):
    return CodonSeq.from_string(s)


def test_recovery_hand_example():
    wt = seq("GGAAUGUGG")
    gen = seq("GGUAUGUGG")
    assert codon_recovery(gen, wt) == pytest.approx(2 / 3)
    assert aa_recovery(gen, wt) == 1.0


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        codon_recovery(seq("AUG"), seq("AUGAUG"))


def test_naive_and_oracle():
    usage = build_usage_table([seq("GGAGGAGGUAUG")])
    wt = seq("GGUGGA")
    gen = seq("GGCGGC")
    assert naive_codon_recovery(gen, wt, usage) == 0.5  # both become GGA
    assert oracle_codon_recovery(wt, usage) == 0.5


def test_met_trp_oracle_is_one():
    usage = build_usage_table([seq("AUGUGGGGA")])
    assert oracle_codon_recovery(seq("AUGUGGUGGAUG"), usage) == 1.0


@given(st.data())
def test_report_identities(data):
    n = data.draw(st.integers(1, 5))
    pairs = []
    for _ in range(n):
        L = data.draw(st.integers(1, 20))
        gen = data.draw(st.lists(st.integers(0, 63), min_size=L, max_size=L))
        wt = data.draw(st.lists(st.integers(0, 63), min_size=L, max_size=L))
        pairs.append((gen, wt))
    usage = build_usage_table([CodonSeq(tuple(range(64)))])
    report = RecoveryReport()
    for g, w in pairs:
        report.add(g, w, usage)
        assert aa_recovery(g, w) >= codon_recovery(g, w)
    assert report.aa_recovery >= report.codon_recovery
    assert report.self_check()
    total = sum(len(w) for _, w in pairs)
    assert math.isclose(report.codon_recovery, sum(codon_recovery(g, w) * len(w) for g, w in pairs) / total)


def test_report_tsv():
    report = RecoveryReport()
    report.add(seq("AUGUGG"), seq("AUGUGA"))
    out = io.StringIO()
    report.write_tsv(out)
    lines = out.getvalue().splitlines()
    assert lines[0] == "aa\tcodon_rec\taa_rec\tnaive\toracle\tsupport"
    assert lines[1:] == ["M\t1.000000\t1.000000\t0.000000\t0.000000\t1", "*\t0.000000\t0.000000\t0.000000\t0.000000\t1"]


def pair(i=0, wt="GGAAUG", mut="GGUAUG", fw=1.0, fm=0.0, **kw):
    return SynonymousPair(f"p{i}", seq(wt), seq(mut), fw, fm, **kw)


def test_pair_validation():
    with pytest.raises(InvalidPair, match="not synonymous"):
        pair(mut="GCAAUG")
    with pytest.raises(InvalidPair, match="identical"):
        pair(mut="GGAAUG")
    with pytest.raises(InvalidPair, match="lengths"):
        pair(mut="GGU")
    with pytest.raises(InvalidPair, match="tied"):
        pair(fm=1.0)


def test_pair_json_round_trip(tmp_path):
    obj = {"id": "x", "wt_codons": "GGAAUG", "mut_codons": "GGUAUG", "wt_fitness": 0.2, "mut_fitness": 0.9, "structure_id": "s1"}
    path = tmp_path / "pairs.jsonl"
    path.write_text(json.dumps(obj) + "\n")
    (p,) = read_pairs(path)
    assert p.structure_id == "s1"
    high, low, d = p.ranked()
    assert high == seq("GGUAUG") and d == pytest.approx(0.7)
    with pytest.raises(InvalidPair, match="x"):
        pair_from_json({**obj, "mut_codons": "GCAAUG"})


def test_select_top_pairs():
    ps = [pair(i, fw=float(i), fm=0.0 if i else 0.5) for i in range(5)]
    assert [p.id for p in select_top_pairs(ps, 2)] == ["p4", "p3"]


def test_binomial_p_value():
    rows = [PairRow(str(i), 1.0, 1.0, i < 8) for i in range(10)]
    res = PairEvalResult(rows)
    expected = sum(math.comb(10, k) for k in (8, 9, 10)) / 1024
    assert res.binomial_p_value() == pytest.approx(expected, rel=1e-12)
    assert res.fraction_correct == 0.8


def test_synonymous_pair_eval_uses_score_difference():
    model = CodonMPNN(ModelConfig(hidden_dim=8, encoder_layers=1, decoder_layers=1, knn=4, num_taxa=1))
    x = random_backbone(6, np.random.default_rng(0))
    wt = back_translate("GAMWKL", "lowest")
    mut = back_translate("GAMWKL", "highest")
    p = SynonymousPair("a", wt, mut, 2.0, 1.0, structure_id="s")
    res = synonymous_pair_eval(model, [p], {"s": x}, taxon=0)
    (row,) = res.rows
    expected = model.score(x, 0, wt).total - model.score(x, 0, mut).total
    assert row.dll == pytest.approx(expected)
    assert row.correct == (expected > 0)
    out = io.StringIO()
    res.write_tsv(out)
    assert out.getvalue().startswith("pair_id\tdll\tdfitness\tcorrect\n")


def test_encode_triplet_usage_for_naive():
    usage = build_usage_table([seq("CUGCUG")])
    assert naive_codon_recovery(seq("UUA"), seq("CUG"), usage) == 1.0
    assert encode_triplet("CUG").amino_acid == "L"
