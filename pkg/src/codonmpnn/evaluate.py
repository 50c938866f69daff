"""Recovery metrics, frequency baselines, and synonymous-pair likelihood ranking."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import IO, Callable, Iterable, Mapping, Sequence

import numpy as np

from .genetic_code import AMINO_ACIDS, CODON_TO_AA, CodonSeq, GeneticCodeError, UsageTable, most_frequent_codon


class EvaluateError(ValueError):
    pass


class LengthMismatch(EvaluateError):
    pass


class InvalidPair(EvaluateError):
    def __init__(self, message: str, pair_id: str | None = None):
        super().__init__(f"pair {pair_id}: {message}" if pair_id is not None else message)
        self.pair_id = pair_id


def _indices(seq) -> np.ndarray:
    return np.asarray(seq.indices if isinstance(seq, CodonSeq) else seq, dtype=np.int64)


def _pair(gen, wt) -> tuple[np.ndarray, np.ndarray]:
    g, w = _indices(gen), _indices(wt)
    if g.shape != w.shape:
        raise LengthMismatch(f"generated length {g.size} != wild-type length {w.size}")
    if w.size == 0:
        raise LengthMismatch("empty sequences")
    return g, w


_AA = np.array(CODON_TO_AA)


def _naive_codons(aas: np.ndarray, usage: UsageTable) -> np.ndarray:
    best = {aa: most_frequent_codon(aa, usage).index for aa in set(aas.tolist())}
    return np.array([best[a] for a in aas], dtype=np.int64)


def codon_recovery(gen, wt) -> float:
    g, w = _pair(gen, wt)
    return float(np.mean(g == w))


def aa_recovery(gen, wt) -> float:
    """Position-wise amino-acid identity (stop codons compare as ``'*'``)."""
    g, w = _pair(gen, wt)
    return float(np.mean(_AA[g] == _AA[w]))


def naive_codon_recovery(gen, wt, usage: UsageTable) -> float:
    """Recovery after replacing each generated codon by its amino acid's most frequent codon."""
    g, w = _pair(gen, wt)
    return float(np.mean(_naive_codons(_AA[g], usage) == w))


def oracle_codon_recovery(wt, usage: UsageTable) -> float:
    """Recovery of the most-frequent-codon translation of the true amino acids."""
    w = _indices(wt)
    if w.size == 0:
        raise LengthMismatch("empty wild-type sequence")
    return float(np.mean(_naive_codons(_AA[w], usage) == w))


METRICS = ("codon", "aa", "naive", "oracle")


@dataclass
class AAStats:
    support: int = 0
    hits: dict[str, int] = field(default_factory=lambda: {m: 0 for m in METRICS})

    def fraction(self, metric: str) -> float:
        return self.hits[metric] / self.support if self.support else 0.0


@dataclass
class RecoveryReport:
    """Recovery statistics over a set of (generated, wild-type) pairs.

    Per-amino-acid rows are keyed by the wild-type amino acid and keep integer
    hit counts, so they re-aggregate to the global fractions exactly.
    """

    total: int = 0
    hits: dict[str, int] = field(default_factory=lambda: {m: 0 for m in METRICS})
    per_aa: dict[str, AAStats] = field(default_factory=lambda: {aa: AAStats() for aa in AMINO_ACIDS})

    def add(self, gen, wt, usage: UsageTable | None = None) -> None:
        g, w = _pair(gen, wt)
        aa_g, aa_w = _AA[g], _AA[w]
        matches = {"codon": g == w, "aa": aa_g == aa_w}
        if usage is not None:
            matches["naive"] = _naive_codons(aa_g, usage) == w
            matches["oracle"] = _naive_codons(aa_w, usage) == w
        else:
            matches["naive"] = matches["oracle"] = np.zeros_like(g, dtype=bool)
        self.total += int(w.size)
        for m, hit in matches.items():
            self.hits[m] += int(hit.sum())
        for aa in set(aa_w.tolist()):
            sel = aa_w == aa
            row = self.per_aa[aa]
            row.support += int(sel.sum())
            for m, hit in matches.items():
                row.hits[m] += int(hit[sel].sum())

    def fraction(self, metric: str) -> float:
        return self.hits[metric] / self.total if self.total else 0.0

    @property
    def codon_recovery(self) -> float:
        return self.fraction("codon")

    @property
    def aa_recovery(self) -> float:
        return self.fraction("aa")

    @property
    def naive_codon_recovery(self) -> float:
        return self.fraction("naive")

    @property
    def oracle_codon_recovery(self) -> float:
        return self.fraction("oracle")

    def reaggregate(self) -> dict[str, float]:
        """Global fractions recomputed from the per-amino-acid rows."""
        support = sum(r.support for r in self.per_aa.values())
        return {
            m: (sum(r.hits[m] for r in self.per_aa.values()) / support if support else 0.0) for m in METRICS
        }

    def self_check(self) -> bool:
        return (
            sum(r.support for r in self.per_aa.values()) == self.total
            and self.reaggregate() == {m: self.fraction(m) for m in METRICS}
        )

    def to_dict(self) -> dict:
        return {
            "positions": self.total,
            "codon_recovery": self.codon_recovery,
            "aa_recovery": self.aa_recovery,
            "naive_codon_recovery": self.naive_codon_recovery,
            "oracle_codon_recovery": self.oracle_codon_recovery,
            "per_aa": {
                aa: {
                    "codon_rec": r.fraction("codon"),
                    "aa_rec": r.fraction("aa"),
                    "naive": r.fraction("naive"),
                    "oracle": r.fraction("oracle"),
                    "support": r.support,
                }
                for aa, r in self.per_aa.items()
                if r.support
            },
        }

    def write_tsv(self, out: IO[str]) -> None:
        out.write("aa\tcodon_rec\taa_rec\tnaive\toracle\tsupport\n")
        for aa, r in self.per_aa.items():
            if r.support:
                out.write(
                    f"{aa}\t{r.fraction('codon'):.6f}\t{r.fraction('aa'):.6f}\t"
                    f"{r.fraction('naive'):.6f}\t{r.fraction('oracle'):.6f}\t{r.support}\n"
                )


def recovery_report(pairs: Iterable[tuple], usage: UsageTable | None = None) -> RecoveryReport:
    report = RecoveryReport()
    for gen, wt in pairs:
        report.add(gen, wt, usage)
    return report


# ------------------------------------------------------------ synonymous pairs


@dataclass(frozen=True)
class SynonymousPair:
    id: str
    wt: CodonSeq
    mut: CodonSeq
    wt_fitness: float
    mut_fitness: float
    structure_id: str | None = None
    taxon: int | None = None

    def __post_init__(self) -> None:
        if len(self.wt) != len(self.mut):
            raise InvalidPair(f"lengths differ ({len(self.wt)} vs {len(self.mut)})", self.id)
        if self.wt == self.mut:
            raise InvalidPair("mutant is identical to wild type", self.id)
        if not np.array_equal(_AA[_indices(self.wt)], _AA[_indices(self.mut)]):
            raise InvalidPair("mutation is not synonymous", self.id)
        if self.wt_fitness == self.mut_fitness:
            raise InvalidPair("tied fitness values", self.id)

    @property
    def fitness_gap(self) -> float:
        return abs(self.wt_fitness - self.mut_fitness)

    def ranked(self) -> tuple[CodonSeq, CodonSeq, float]:
        """(higher-fitness seq, lower-fitness seq, fitness difference)."""
        if self.wt_fitness > self.mut_fitness:
            return self.wt, self.mut, self.wt_fitness - self.mut_fitness
        return self.mut, self.wt, self.mut_fitness - self.wt_fitness


def pair_from_json(obj: Mapping) -> SynonymousPair:
    pair_id = str(obj.get("id"))
    try:
        return SynonymousPair(
            id=pair_id,
            wt=CodonSeq.from_string(obj["wt_codons"]),
            mut=CodonSeq.from_string(obj["mut_codons"]),
            wt_fitness=float(obj["wt_fitness"]),
            mut_fitness=float(obj["mut_fitness"]),
            structure_id=obj.get("structure_id"),
            taxon=obj.get("taxon"),
        )
    except KeyError as exc:
        raise InvalidPair(f"missing field {exc.args[0]!r}", pair_id) from None
    except GeneticCodeError as exc:
        raise InvalidPair(str(exc), pair_id) from None


def read_pairs(path: str | os.PathLike | IO[str]) -> list[SynonymousPair]:
    if isinstance(path, (str, os.PathLike)):
        with open(path) as fh:
            return read_pairs(fh)
    return [pair_from_json(json.loads(line)) for line in path if line.strip()]


def select_top_pairs(pairs: Sequence[SynonymousPair], n: int = 250) -> list[SynonymousPair]:
    """The ``n`` pairs with the largest absolute fitness difference."""
    return sorted(pairs, key=lambda p: (-p.fitness_gap, p.id))[:n]


@dataclass(frozen=True)
class PairRow:
    id: str
    dll: float  # log-likelihood(higher fitness) - log-likelihood(lower fitness)
    dfitness: float
    correct: bool


@dataclass
class PairEvalResult:
    rows: list[PairRow]

    @property
    def n_correct(self) -> int:
        return sum(r.correct for r in self.rows)

    @property
    def fraction_correct(self) -> float:
        return self.n_correct / len(self.rows) if self.rows else 0.0

    def binomial_p_value(self) -> float:
        """One-sided P(X >= n_correct) for X ~ Binomial(n, 1/2)."""
        n, k = len(self.rows), self.n_correct
        return math.fsum(math.comb(n, i) for i in range(k, n + 1)) / 2.0**n

    def to_dict(self) -> dict:
        return {
            "pairs": len(self.rows),
            "correct": self.n_correct,
            "fraction_correct": self.fraction_correct,
            "binomial_p_value": self.binomial_p_value(),
        }

    def write_tsv(self, out: IO[str]) -> None:
        out.write("pair_id\tdll\tdfitness\tcorrect\n")
        for r in self.rows:
            out.write(f"{r.id}\t{r.dll:.6f}\t{r.dfitness:.6f}\t{int(r.correct)}\n")


def synonymous_pair_eval(
    model,
    pairs: Sequence[SynonymousPair],
    structure_for: Callable[[SynonymousPair], object] | Mapping[str, object],
    taxon: int | None = None,
    order=None,
) -> PairEvalResult:
    """Rank each pair by model log-likelihood.

    A pair counts as correct when the higher-fitness sequence scores strictly
    higher. Both sequences share the structure, taxon label, and order.
    ``pair.taxon`` overrides ``taxon`` when set.
    """
    if isinstance(structure_for, Mapping):
        lookup = structure_for
        structure_for = lambda p: lookup[p.structure_id if p.structure_id is not None else p.id]  # noqa: E731
    rows = []
    for pair in pairs:
        graph = model.featurize(structure_for(pair))
        label = pair.taxon if pair.taxon is not None else taxon
        high, low, dfit = pair.ranked()
        s_high = model.score(graph, label, high, order).total
        s_low = model.score(graph, label, low, order).total
        dll = s_high - s_low
        rows.append(PairRow(pair.id, dll, dfit, dll > 0))
    return PairEvalResult(rows)
