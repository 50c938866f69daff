"""Training records: backbone coordinates paired with wild-type codons.

One JSON object per line::

    {"id": str, "coords": [[[x, y, z] x 4] x L], "codons": str,
     "tax_id": int | null, "plddt": [L floats] | null}

Atom order within a residue is N, CA, C, O. Split files are JSON objects
with ``train``, ``val`` and ``test`` id lists.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple

import numpy as np

from .genetic_code import CodonSeq, GeneticCodeError

logger = logging.getLogger(__name__)

BACKBONE_ATOMS = ("N", "CA", "C", "O")
PLDDT_THRESHOLD = 0.9


class CorpusError(ValueError):
    pass


class SchemaError(CorpusError):
    pass


class LengthMismatch(CorpusError):
    pass


class NonFiniteCoordinate(CorpusError):
    pass


class MultiChainError(CorpusError):
    pass


class UnknownId(CorpusError):
    def __init__(self, missing: list[str]):
        super().__init__(f"split references {len(missing)} unknown ids: {missing[:20]}")
        self.missing = missing


class SplitError(CorpusError):
    pass


@dataclass(frozen=True, eq=False)
class ProteinRecord:
    id: str
    coords: np.ndarray
    codons: CodonSeq
    tax_id: int | None = None
    plddt: np.ndarray | None = None

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 3 or coords.shape[1:] != (4, 3):
            raise SchemaError(f"{self.id}: coords must have shape (L, 4, 3), got {coords.shape}")
        if not np.isfinite(coords).all():
            raise NonFiniteCoordinate(f"{self.id}: coordinates contain NaN or Inf")
        if len(self.codons) != coords.shape[0]:
            raise LengthMismatch(f"{self.id}: {len(self.codons)} codons for {coords.shape[0]} residues")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        if self.plddt is not None:
            plddt = np.asarray(self.plddt, dtype=np.float64)
            if plddt.shape != (coords.shape[0],):
                raise LengthMismatch(f"{self.id}: {plddt.size} pLDDT values for {coords.shape[0]} residues")
            if plddt.size and plddt.max() > 1.5:
                plddt = plddt / 100.0
            plddt.setflags(write=False)
            object.__setattr__(self, "plddt", plddt)

    def __len__(self) -> int:
        return self.coords.shape[0]

    @property
    def mean_plddt(self) -> float | None:
        return None if self.plddt is None else float(self.plddt.mean())

    def amino_acids(self) -> str:
        from .genetic_code import translate_seq

        return translate_seq(self.codons, allow_internal_stop=True)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "coords": self.coords.tolist(),
            "codons": self.codons.nucleotides,
            "tax_id": self.tax_id,
            "plddt": None if self.plddt is None else self.plddt.tolist(),
        }

    def same_as(self, other: "ProteinRecord") -> bool:
        """Field-by-field equality."""
        if self.plddt is None or other.plddt is None:
            plddt_eq = self.plddt is None and other.plddt is None
        else:
            plddt_eq = np.array_equal(self.plddt, other.plddt)
        return (
            self.id == other.id
            and np.array_equal(self.coords, other.coords)
            and self.codons == other.codons
            and self.tax_id == other.tax_id
            and plddt_eq
        )


def record_from_json(obj: dict, line_number: int | None = None) -> ProteinRecord:
    where = f"line {line_number}: " if line_number is not None else ""
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}record must be a JSON object")
    chains = obj.get("chains")
    if chains is not None and len(chains) > 1:
        raise MultiChainError(f"{where}record {obj.get('id')!r} has {len(chains)} chains; only single-chain records are supported")
    for key in ("id", "coords", "codons"):
        if key not in obj:
            raise SchemaError(f"{where}missing field {key!r}")
    try:
        codons = CodonSeq.from_string(obj["codons"])
    except (GeneticCodeError, AttributeError) as exc:
        raise SchemaError(f"{where}bad codons: {exc}") from None
    tax_id = obj.get("tax_id")
    if tax_id is not None and not isinstance(tax_id, int):
        raise SchemaError(f"{where}tax_id must be an integer or null")
    try:
        coords = np.asarray(obj["coords"], dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}coords are not a regular numeric array") from None
    try:
        return ProteinRecord(str(obj["id"]), coords, codons, tax_id, obj.get("plddt"))
    except CorpusError as exc:
        raise type(exc)(f"{where}{exc}") from None


def read_records(path: str | os.PathLike | IO[str]) -> Iterator[ProteinRecord]:
    """Stream validated records from a JSONL file."""
    if isinstance(path, (str, os.PathLike)):
        with open(path) as fh:
            yield from read_records(fh)
        return
    for line_number, line in enumerate(path, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {line_number}: invalid JSON ({exc.msg})") from None
        yield record_from_json(obj, line_number)


def write_records(records: Iterable[ProteinRecord], path: str | os.PathLike | IO[str]) -> None:
    if isinstance(path, (str, os.PathLike)):
        with open(path, "w") as fh:
            write_records(records, fh)
        return
    for rec in records:
        path.write(json.dumps(rec.to_json()) + "\n")


class FilterResult(NamedTuple):
    kept: list[ProteinRecord]
    dropped: int
    missing_plddt: int


def filter_plddt(records: Iterable[ProteinRecord], threshold: float = PLDDT_THRESHOLD) -> FilterResult:
    """Keep records whose mean pLDDT is strictly above ``threshold``.

    Records without pLDDT are kept and tallied in ``missing_plddt``.
    """
    kept, dropped, missing = [], 0, 0
    for rec in records:
        mean = rec.mean_plddt
        if mean is None:
            missing += 1
            kept.append(rec)
        elif mean > threshold:
            kept.append(rec)
        else:
            dropped += 1
    if missing:
        logger.warning("%d records have no pLDDT and were kept unfiltered", missing)
    return FilterResult(kept, dropped, missing)


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...] = ()
    test: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, tuple(str(i) for i in getattr(self, name)))
        sets = {name: set(getattr(self, name)) for name in ("train", "val", "test")}
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            overlap = sets[a] & sets[b]
            if overlap:
                raise SplitError(f"{a} and {b} share ids: {sorted(overlap)[:20]}")

    @classmethod
    def from_json(cls, obj: dict) -> "DatasetSplit":
        return cls(tuple(obj.get("train", ())), tuple(obj.get("val", ())), tuple(obj.get("test", ())))


def read_split(path: str | os.PathLike) -> DatasetSplit:
    with open(path) as fh:
        return DatasetSplit.from_json(json.load(fh))


def apply_split(
    records: Iterable[ProteinRecord], split: DatasetSplit
) -> tuple[list[ProteinRecord], list[ProteinRecord], list[ProteinRecord]]:
    """Partition records by split membership, preserving input order."""
    records = list(records)
    ids = {r.id for r in records}
    missing = [i for i in split.train + split.val + split.test if i not in ids]
    if missing:
        raise UnknownId(missing)
    member = {i: 0 for i in split.train} | {i: 1 for i in split.val} | {i: 2 for i in split.test}
    out: tuple[list, list, list] = ([], [], [])
    for r in records:
        if r.id in member:
            out[member[r.id]].append(r)
    return out
