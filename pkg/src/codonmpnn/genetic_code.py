"""Codon vocabulary, standard genetic code, and codon-usage baselines.

Codons are indexed ``16*n1 + 4*n2 + n3`` with ``A=0, C=1, G=2, U=3``, so
``AAA`` is 0 and ``UUU`` is 63. DNA input is accepted and ``T`` is read as
``U``. Only the standard nuclear code (NCBI translation table 1) is supported.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

NUCLEOTIDES = "ACGU"
NUM_CODONS = 64
STOP = "*"

# Amino acid per codon index, canonical ACGU ordering.
_TABLE1 = "KNKNTTTTRSRSIIMIQHQHPPPPRRRRLLLLEDEDAAAAGGGGVVVV*Y*YSSSS*CWCLFLF"

TRIPLETS: tuple[str, ...] = tuple("".join(t) for t in itertools.product(NUCLEOTIDES, repeat=3))
AMINO_ACIDS: tuple[str, ...] = tuple(sorted(set(_TABLE1) - {STOP})) + (STOP,)

_NT_INDEX = {nt: i for i, nt in enumerate(NUCLEOTIDES)}
_NT_INDEX["T"] = _NT_INDEX["U"]

CODON_TO_AA: tuple[str, ...] = tuple(_TABLE1)
SYNONYMOUS: dict[str, tuple[int, ...]] = {
    aa: tuple(i for i, a in enumerate(_TABLE1) if a == aa) for aa in AMINO_ACIDS
}
STOP_CODONS: tuple[int, ...] = SYNONYMOUS[STOP]


class GeneticCodeError(ValueError):
    pass


class InvalidNucleotide(GeneticCodeError):
    pass


class InvalidLength(GeneticCodeError):
    pass


class InternalStop(GeneticCodeError):
    pass


class EmptyCorpus(GeneticCodeError):
    pass


class NoUsageData(GeneticCodeError):
    pass


@dataclass(frozen=True, order=True)
class Codon:
    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < NUM_CODONS:
            raise GeneticCodeError(f"codon index out of range: {self.index}")

    @property
    def triplet(self) -> str:
        return TRIPLETS[self.index]

    @property
    def amino_acid(self) -> str:
        return CODON_TO_AA[self.index]

    def __str__(self) -> str:
        return self.triplet


def encode_triplet(triplet: str) -> Codon:
    if len(triplet) != 3:
        raise InvalidLength(f"codon must be 3 nucleotides, got {triplet!r}")
    index = 0
    for ch in triplet.upper():
        try:
            index = 4 * index + _NT_INDEX[ch]
        except KeyError:
            raise InvalidNucleotide(f"invalid nucleotide {ch!r} in {triplet!r}") from None
    return Codon(index)


def decode_codon(index: int) -> str:
    return Codon(index).triplet


def translate(codon: Codon | int) -> str:
    """Single-letter amino acid for a codon; ``'*'`` for stop codons."""
    index = codon.index if isinstance(codon, Codon) else int(codon)
    return CODON_TO_AA[index]


def synonymous_codons(aa: str) -> tuple[int, ...]:
    try:
        return SYNONYMOUS[aa]
    except KeyError:
        raise GeneticCodeError(f"unknown amino acid {aa!r}") from None


@dataclass(frozen=True)
class CodonSeq:
    """A nonempty codon sequence stored as canonical indices."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise InvalidLength("codon sequence must be nonempty")
        for i in idx:
            if not 0 <= i < NUM_CODONS:
                raise GeneticCodeError(f"codon index out of range: {i}")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_string(cls, nucleotides: str) -> "CodonSeq":
        nucleotides = nucleotides.strip()
        if len(nucleotides) % 3 != 0:
            raise InvalidLength(f"nucleotide string length {len(nucleotides)} is not a multiple of 3")
        return cls(tuple(encode_triplet(nucleotides[i : i + 3]).index for i in range(0, len(nucleotides), 3)))

    @classmethod
    def from_codons(cls, codons: Iterable[Codon]) -> "CodonSeq":
        return cls(tuple(c.index for c in codons))

    @property
    def codons(self) -> list[Codon]:
        return [Codon(i) for i in self.indices]

    @property
    def nucleotides(self) -> str:
        return "".join(TRIPLETS[i] for i in self.indices)

    def __len__(self) -> int:
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __getitem__(self, i: int) -> int:
        return self.indices[i]

    def __str__(self) -> str:
        return self.nucleotides


def _as_indices(seq: CodonSeq | Sequence[int] | Sequence[Codon]) -> tuple[int, ...]:
    if isinstance(seq, CodonSeq):
        return seq.indices
    return tuple(c.index if isinstance(c, Codon) else int(c) for c in seq)


def translate_seq(seq: CodonSeq | Sequence[int], allow_internal_stop: bool = False) -> str:
    """Translate codons to an amino-acid string, stripping one trailing stop.

    Internal stops raise :class:`InternalStop` unless ``allow_internal_stop``
    is set, in which case they appear as ``'*'``.
    """
    idx = _as_indices(seq)
    if not idx:
        raise InvalidLength("cannot translate an empty sequence")
    aas = [CODON_TO_AA[i] for i in idx]
    if aas[-1] == STOP:
        aas.pop()
    if not allow_internal_stop and STOP in aas:
        raise InternalStop(f"internal stop codon at position {aas.index(STOP)}")
    return "".join(aas)


@dataclass
class UsageTable:
    """Per-amino-acid synonymous codon counts."""

    counts: dict[str, Counter] = field(default_factory=lambda: {aa: Counter() for aa in AMINO_ACIDS})
    provenance: str = ""

    def count(self, aa: str, codon: Codon | int) -> int:
        index = codon.index if isinstance(codon, Codon) else int(codon)
        return self.counts[aa][index]

    def total(self, aa: str) -> int:
        return sum(self.counts[aa].values())

    def update(self, seq: CodonSeq | Sequence[int]) -> None:
        for i in _as_indices(seq):
            self.counts[CODON_TO_AA[i]][i] += 1

    def merge(self, other: "UsageTable") -> "UsageTable":
        merged = UsageTable(provenance=self.provenance or other.provenance)
        for aa in AMINO_ACIDS:
            merged.counts[aa] = self.counts[aa] + other.counts[aa]
        return merged

    def argmax_codons(self) -> dict[str, int]:
        """Most frequent codon per amino acid, for every resolvable amino acid."""
        out = {}
        for aa in AMINO_ACIDS:
            try:
                out[aa] = most_frequent_codon(aa, self).index
            except NoUsageData:
                pass
        return out


def build_usage_table(corpus: Iterable[CodonSeq | Sequence[int]], provenance: str = "") -> UsageTable:
    table = UsageTable(provenance=provenance)
    n = 0
    for seq in corpus:
        table.update(seq)
        n += 1
    if n == 0:
        raise EmptyCorpus("cannot build a usage table from an empty corpus")
    return table


def build_cluster_usage_tables(
    corpus: Iterable[tuple[int, CodonSeq | Sequence[int]]], provenance: str = ""
) -> dict[int, UsageTable]:
    """Usage tables keyed by taxon cluster label from ``(label, seq)`` pairs."""
    tables: dict[int, UsageTable] = {}
    for label, seq in corpus:
        tables.setdefault(label, UsageTable(provenance=f"{provenance}#cluster={label}")).update(seq)
    if not tables:
        raise EmptyCorpus("cannot build usage tables from an empty corpus")
    return tables


def most_frequent_codon(aa: str, table: UsageTable | Mapping[str, Counter]) -> Codon:
    """Argmax-count synonymous codon; ties go to the lowest codon index."""
    synonyms = synonymous_codons(aa)
    if len(synonyms) == 1:
        return Codon(synonyms[0])
    counts = table.counts[aa] if isinstance(table, UsageTable) else table.get(aa, Counter())
    best, best_count = None, 0
    for c in synonyms:
        n = counts.get(c, 0)
        if n > best_count:
            best, best_count = c, n
    if best is None:
        raise NoUsageData(f"no usage data for amino acid {aa!r}")
    return Codon(best)
