"""Residue graph construction from backbone coordinates.

Each residue connects to its nearest residues by CA-CA distance. An edge
``i -> j`` carries the 16 inter-residue backbone atom distances expanded in
Gaussian radial bases, plus a one-hot of the clamped sequence offset
``j - i``. Nothing else about the coordinates is exposed, so every feature
is unchanged by rotations and translations of the input.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import IO

import numpy as np

KNN = 48
NUM_RBF = 16
RBF_MIN, RBF_MAX = 2.0, 22.0
RBF_CENTERS = np.linspace(RBF_MIN, RBF_MAX, NUM_RBF)
RBF_WIDTH = (RBF_MAX - RBF_MIN) / (NUM_RBF - 1)
MAX_REL_OFFSET = 32
NUM_ATOM_PAIRS = 16
EDGE_DIM = NUM_ATOM_PAIRS * NUM_RBF + 2 * MAX_REL_OFFSET + 1  # 321

FEATURE_MAGIC = b"CMPF"
FEATURE_VERSION = 1


class FeaturizeError(ValueError):
    pass


class DegenerateStructure(FeaturizeError):
    pass


class IndexOutOfRange(FeaturizeError):
    pass


@dataclass(frozen=True, eq=False)
class ResidueGraph:
    neighbors: np.ndarray  # (L, K) int64, sorted by (CA distance, index)
    edge_features: np.ndarray  # (L, K, EDGE_DIM) float32

    @property
    def length(self) -> int:
        return self.neighbors.shape[0]

    @property
    def k(self) -> int:
        return self.neighbors.shape[1]

    @property
    def node_features(self) -> np.ndarray:
        # Nodes carry no structural input; the model starts them at zero.
        return np.zeros((self.length, 0), dtype=np.float32)


def _check_coords(coords) -> np.ndarray:
    x = np.asarray(coords, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (4, 3):
        raise FeaturizeError(f"coords must have shape (L, 4, 3), got {x.shape}")
    if x.shape[0] < 2:
        raise FeaturizeError(f"need at least 2 residues, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise FeaturizeError("coordinates contain NaN or Inf")
    return x


def knn_graph(coords, k: int = KNN) -> np.ndarray:
    """Indices of the ``min(k, L-1)`` nearest residues by CA distance.

    Rows are sorted by distance with ties going to the lower index.
    """
    x = _check_coords(coords)
    ca = x[:, 1]
    L = ca.shape[0]
    d = np.sqrt(((ca[:, None, :] - ca[None, :, :]) ** 2).sum(-1))
    off_diag = ~np.eye(L, dtype=bool)
    if (d[off_diag] == 0).any():
        i, j = np.argwhere((d == 0) & off_diag)[0]
        raise DegenerateStructure(f"residues {i} and {j} have identical CA coordinates")
    np.fill_diagonal(d, np.inf)
    kk = min(k, L - 1)
    # Stable sort keeps lower indices first among equal distances.
    return np.argsort(d, axis=1, kind="stable")[:, :kk].astype(np.int64)


def rbf(distances: np.ndarray) -> np.ndarray:
    d = np.asarray(distances)[..., None]
    return np.exp(-(((d - RBF_CENTERS) / RBF_WIDTH) ** 2))


def relative_offset_onehot(offset: np.ndarray) -> np.ndarray:
    cls = np.clip(offset, -MAX_REL_OFFSET, MAX_REL_OFFSET) + MAX_REL_OFFSET
    return np.eye(2 * MAX_REL_OFFSET + 1)[cls]


def _edge_block(x: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Features for edges ``src -> dst`` (arrays of equal shape)."""
    a = x[src][..., :, None, :]  # (..., 4, 1, 3) atoms of the receiving residue
    b = x[dst][..., None, :, :]  # (..., 1, 4, 3) atoms of the neighbor
    dist = np.sqrt(((a - b) ** 2).sum(-1))  # (..., 4, 4)
    dist = dist.reshape(*dist.shape[:-2], NUM_ATOM_PAIRS)
    radial = rbf(dist).reshape(*dist.shape[:-1], NUM_ATOM_PAIRS * NUM_RBF)
    return np.concatenate([radial, relative_offset_onehot(dst - src)], axis=-1)


def edge_features(coords, i: int, j: int) -> np.ndarray:
    x = _check_coords(coords)
    L = x.shape[0]
    if i == j:
        raise IndexOutOfRange("edge features are undefined for self-edges")
    if not (0 <= i < L and 0 <= j < L):
        raise IndexOutOfRange(f"edge ({i}, {j}) outside structure of length {L}")
    return _edge_block(x, np.array(i), np.array(j)).astype(np.float32)


def build_graph(structure, k: int = KNN) -> ResidueGraph:
    """Featurize a :class:`ProteinRecord` or an ``(L, 4, 3)`` coordinate array."""
    coords = getattr(structure, "coords", structure)
    x = _check_coords(coords)
    nbr = knn_graph(x, k)
    src = np.broadcast_to(np.arange(x.shape[0])[:, None], nbr.shape)
    feats = _edge_block(x, src, nbr).astype(np.float32)
    return ResidueGraph(nbr, feats)


def write_feature_dump(graph: ResidueGraph, out: str | os.PathLike | IO[bytes]) -> None:
    """Binary dump: magic, u16 version, u32 L, u32 K, u32 edge dim, then
    int64 neighbors and float32 edge features, little-endian."""
    if isinstance(out, (str, os.PathLike)):
        with open(out, "wb") as fh:
            write_feature_dump(graph, fh)
        return
    out.write(FEATURE_MAGIC)
    out.write(struct.pack("<HIII", FEATURE_VERSION, graph.length, graph.k, graph.edge_features.shape[-1]))
    out.write(graph.neighbors.astype("<i8").tobytes())
    out.write(graph.edge_features.astype("<f4").tobytes())


def read_feature_dump(src: str | os.PathLike | IO[bytes]) -> ResidueGraph:
    if isinstance(src, (str, os.PathLike)):
        with open(src, "rb") as fh:
            return read_feature_dump(fh)
    if src.read(4) != FEATURE_MAGIC:
        raise FeaturizeError("not a feature dump (bad magic)")
    version, L, K, D = struct.unpack("<HIII", src.read(14))
    if version != FEATURE_VERSION:
        raise FeaturizeError(f"unsupported feature dump version {version}")
    nbr = np.frombuffer(src.read(8 * L * K), dtype="<i8").reshape(L, K).astype(np.int64)
    feats = np.frombuffer(src.read(4 * L * K * D), dtype="<f4").reshape(L, K, D).astype(np.float32)
    return ResidueGraph(nbr, feats)
