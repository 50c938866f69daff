"""Toy backbones and codon corpora for smoke tests and controlled experiments."""

from __future__ import annotations

import numpy as np

from .corpus import ProteinRecord
from .genetic_code import AMINO_ACIDS, STOP, CodonSeq, synonymous_codons

CA_CA = 3.8
SENSE_AAS = tuple(aa for aa in AMINO_ACIDS if aa != STOP)


def random_backbone(L: int, rng: np.random.Generator, min_sep: float = 3.6) -> np.ndarray:
    """Self-avoiding CA random walk with N, C, O placed around each CA."""
    ca = np.zeros((L, 3))
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    for i in range(1, L):
        for _ in range(100):
            step = direction + 0.9 * rng.normal(size=3)
            step /= np.linalg.norm(step)
            # Jittered bond length so no two CA distances tie exactly.
            cand = ca[i - 1] + (CA_CA + 0.02 * rng.normal()) * step
            if i < 2 or np.linalg.norm(ca[: i - 1] - cand, axis=1).min() > min_sep:
                break
        ca[i] = cand
        direction = step
    coords = np.empty((L, 4, 3))
    coords[:, 1] = ca
    for i in range(L):
        prev = ca[i - 1] if i > 0 else ca[i] - (ca[i + 1] - ca[i])
        nxt = ca[i + 1] if i < L - 1 else ca[i] + (ca[i] - ca[i - 1])
        u = nxt - prev
        u /= np.linalg.norm(u)
        w = np.cross(u, rng.normal(size=3))
        w /= np.linalg.norm(w)
        coords[i, 0] = ca[i] - 1.46 * (0.8 * u + 0.6 * w)
        coords[i, 2] = ca[i] + 1.52 * (0.8 * u - 0.6 * w)
        coords[i, 3] = coords[i, 2] + 1.23 * w
    return coords


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rigid_transform(coords: np.ndarray, rng: np.random.Generator, scale: float = 20.0) -> np.ndarray:
    return coords @ random_rotation(rng).T + rng.normal(scale=scale, size=3)


def random_protein(L: int, rng: np.random.Generator, amino_acids=SENSE_AAS) -> str:
    return "".join(rng.choice(list(amino_acids), size=L))


def back_translate(protein: str, rule: str = "lowest", rng: np.random.Generator | None = None) -> CodonSeq:
    """Codons for ``protein`` using the lowest-index, highest-index, or a random synonym."""
    out = []
    for aa in protein:
        syn = synonymous_codons(aa)
        if rule == "lowest":
            out.append(syn[0])
        elif rule == "highest":
            out.append(syn[-1])
        elif rule == "random":
            out.append(int(rng.choice(syn)))
        else:
            raise ValueError(f"unknown rule {rule!r}")
    return CodonSeq(tuple(out))


def random_record(record_id: str, L: int, rng: np.random.Generator, tax_id: int | None = None) -> ProteinRecord:
    coords = random_backbone(L, rng)
    codons = back_translate(random_protein(L, rng), "random", rng)
    plddt = rng.uniform(90.5, 99.0, size=L)
    return ProteinRecord(record_id, coords, codons, tax_id, plddt)
