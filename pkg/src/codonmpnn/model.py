"""Structure-conditioned any-order autoregressive codon model.

The encoder runs message passing over the residue graph. The decoder predicts
64 codon logits per residue; a residue receives the codon tokens and decoder
states of neighbors that come earlier in the decoding order, and only the
encoder states (with a MASK token) of neighbors that come later. A taxon
cluster embedding is added to the initial node and edge embeddings.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import asdict, dataclass
from typing import Mapping, NamedTuple

import numpy as np

from .featurize import EDGE_DIM, KNN, ResidueGraph, build_graph
from .genetic_code import NUM_CODONS, STOP_CODONS, CodonSeq
from .numerics import ParamStore, Tensor, get_dtype, ops, read_checkpoint, write_checkpoint

MASK_TOKEN = NUM_CODONS
PAD_TOKEN = NUM_CODONS + 1
TOKEN_VOCAB = NUM_CODONS + 2


class ModelError(ValueError):
    pass


class ConfigMismatch(ModelError):
    pass


class NotABijection(ModelError):
    pass


class InvalidTemperature(ModelError):
    pass


class LengthMismatch(ModelError):
    pass


class InvalidTaxon(ModelError):
    pass


@dataclass
class ModelConfig:
    hidden_dim: int = 128
    encoder_layers: int = 3
    decoder_layers: int = 3
    knn: int = KNN
    num_taxa: int = 0  # k clusters; label k is the null token
    temperature: float = 0.1
    activation: str = "relu"
    ff_mult: int = 4
    mask_stops: bool = True
    seed: int = 0

    @property
    def null_label(self) -> int:
        return self.num_taxa

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in known})


class Encoding(NamedTuple):
    nodes: Tensor  # (L, H)
    edges: Tensor  # (L, K, H)
    graph: ResidueGraph


class ScoreResult(NamedTuple):
    total: float
    per_position: np.ndarray  # log p of each residue's codon, in sequence order
    order: np.ndarray


def check_permutation(order, L: int) -> np.ndarray:
    order = np.asarray(order, dtype=np.int64)
    if order.shape != (L,) or not np.array_equal(np.sort(order), np.arange(L)):
        raise NotABijection(f"decoding order is not a permutation of range({L})")
    return order


def order_ranks(order: np.ndarray) -> np.ndarray:
    """``rank[p]`` = step at which position ``p`` is decoded."""
    rank = np.empty_like(order)
    rank[order] = np.arange(order.shape[0])
    return rank


class CodonMPNN:
    def __init__(self, config: ModelConfig | None = None, params: ParamStore | None = None):
        self.config = config or ModelConfig()
        if self.config.activation not in ops.ACTIVATIONS:
            raise ModelError(f"unknown activation {self.config.activation!r}")
        self.params = params if params is not None else self._init_params(np.random.default_rng(self.config.seed))
        self.act = ops.ACTIVATIONS[self.config.activation]

    def _init_params(self, rng: np.random.Generator) -> ParamStore:
        cfg = self.config
        H = cfg.hidden_dim
        F = H * cfg.ff_mult
        dtype = get_dtype()
        store = ParamStore()

        def weight(name, n_in, n_out, fan_in=None):
            bound = np.sqrt(6.0 / ((fan_in or n_in) + n_out))
            store.add(name, rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype))

        def zeros(name, *shape):
            store.add(name, np.zeros(shape, dtype=dtype))

        def ones(name, *shape):
            store.add(name, np.ones(shape, dtype=dtype))

        weight("edge.W", EDGE_DIM, H)
        ones("edge.ln.g", H)
        zeros("edge.ln.b", H)
        weight("taxon.embedding", cfg.num_taxa + 1, H)
        weight("taxon.edge_proj", H, H)
        weight("token.embedding", TOKEN_VOCAB, H)

        def layer(prefix, n_in_blocks, blocks):
            for blk in blocks:
                weight(f"{prefix}.W1.{blk}", H, H, fan_in=n_in_blocks * H)
            zeros(f"{prefix}.b1", H)
            weight(f"{prefix}.W2", H, H)
            zeros(f"{prefix}.b2", H)
            weight(f"{prefix}.W3", H, H)
            zeros(f"{prefix}.b3", H)
            ones(f"{prefix}.ln1.g", H)
            zeros(f"{prefix}.ln1.b", H)
            weight(f"{prefix}.ff.W_in", H, F)
            zeros(f"{prefix}.ff.b_in", F)
            weight(f"{prefix}.ff.W_out", F, H)
            zeros(f"{prefix}.ff.b_out", H)
            ones(f"{prefix}.ln2.g", H)
            zeros(f"{prefix}.ln2.b", H)

        for i in range(cfg.encoder_layers):
            layer(f"enc.{i}", 3, ("self", "edge", "nbr"))
        for i in range(cfg.decoder_layers):
            layer(f"dec.{i}", 4, ("self", "edge", "tok", "nbr"))
        weight("out.W", H, NUM_CODONS)
        zeros("out.b", NUM_CODONS)
        return store

    def num_parameters(self) -> int:
        return self.params.num_parameters()

    # ----------------------------------------------------------------- graph

    def featurize(self, structure) -> ResidueGraph:
        if isinstance(structure, ResidueGraph):
            return structure
        return build_graph(structure, self.config.knn)

    def _check_taxon(self, taxon: int | None) -> int:
        if taxon is None:
            return self.config.null_label
        if not 0 <= int(taxon) <= self.config.num_taxa:
            raise InvalidTaxon(f"taxon label {taxon} outside [0, {self.config.num_taxa}]")
        return int(taxon)

    # --------------------------------------------------------------- forward

    def _update(self, prefix: str, h: Tensor, neighbor_term: Tensor, edge_term: Tensor) -> Tensor:
        """Message passing update shared by encoder and decoder layers."""
        P = self.params
        L, H = h.shape
        self_term = ops.linear(h, P[f"{prefix}.W1.self"], P[f"{prefix}.b1"])
        pre = ops.add(ops.add(edge_term, neighbor_term), ops.reshape(self_term, (L, 1, H)))
        msg = self.act(pre)
        msg = self.act(ops.linear(msg, P[f"{prefix}.W2"], P[f"{prefix}.b2"]))
        msg = ops.linear(msg, P[f"{prefix}.W3"], P[f"{prefix}.b3"])
        h = ops.layer_norm(ops.add(h, ops.mean(msg, axis=1)), P[f"{prefix}.ln1.g"], P[f"{prefix}.ln1.b"])
        ff = ops.linear(self.act(ops.linear(h, P[f"{prefix}.ff.W_in"], P[f"{prefix}.ff.b_in"])), P[f"{prefix}.ff.W_out"], P[f"{prefix}.ff.b_out"])
        return ops.layer_norm(ops.add(h, ff), P[f"{prefix}.ln2.g"], P[f"{prefix}.ln2.b"])

    def encode(self, graph: ResidueGraph, taxon: int | None = None) -> Encoding:
        cfg, P = self.config, self.params
        expected_k = min(cfg.knn, graph.length - 1)
        if graph.k != expected_k:
            raise ConfigMismatch(f"graph has {graph.k} neighbors per node, model expects {expected_k}")
        taxon = self._check_taxon(taxon)
        L, H = graph.length, cfg.hidden_dim
        dtype = P["edge.W"].dtype
        nbr = graph.neighbors

        edges = ops.layer_norm(ops.matmul(Tensor(graph.edge_features, dtype=dtype), P["edge.W"]), P["edge.ln.g"], P["edge.ln.b"])
        tax = ops.gather_rows(P["taxon.embedding"], np.array([taxon]))  # (1, H)
        edges = ops.add(edges, ops.matmul(tax, P["taxon.edge_proj"]))
        nodes = ops.add(Tensor(np.zeros((L, H), dtype=dtype)), tax)

        for i in range(cfg.encoder_layers):
            prefix = f"enc.{i}"
            edge_term = ops.matmul(edges, P[f"{prefix}.W1.edge"])
            neighbor_term = ops.gather_rows(ops.matmul(nodes, P[f"{prefix}.W1.nbr"]), nbr)
            nodes = self._update(prefix, nodes, neighbor_term, edge_term)
        return Encoding(nodes, edges, graph)

    def decode_logits(self, enc: Encoding, tokens, order) -> Tensor:
        """Codon logits ``(L, 64)`` for every position given its order prefix.

        ``tokens`` holds a codon index (or MASK) per position; only tokens at
        positions earlier in ``order`` than the receiving position are used.
        """
        P = self.params
        graph = enc.graph
        L = graph.length
        order = check_permutation(order, L)
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.shape != (L,):
            raise LengthMismatch(f"expected {L} tokens, got {tokens.shape}")
        if tokens.min() < 0 or tokens.max() >= TOKEN_VOCAB:
            raise ModelError("token index outside vocabulary")
        nbr = graph.neighbors
        rank = order_ranks(order)
        past = (rank[nbr] < rank[:, None])[..., None]  # (L, K, 1)

        tok_emb = ops.gather_rows(P["token.embedding"], tokens)
        mask_emb = ops.gather_rows(P["token.embedding"], np.array([MASK_TOKEN]))
        h_enc = enc.nodes
        h = h_enc
        for i in range(self.config.decoder_layers):
            prefix = f"dec.{i}"
            W_tok, W_nbr = P[f"{prefix}.W1.tok"], P[f"{prefix}.W1.nbr"]
            seen = ops.add(ops.matmul(tok_emb, W_tok), ops.matmul(h, W_nbr))
            unseen = ops.add(ops.matmul(mask_emb, W_tok), ops.matmul(h_enc, W_nbr))
            neighbor_term = ops.where(past, ops.gather_rows(seen, nbr), ops.gather_rows(unseen, nbr))
            edge_term = ops.matmul(enc.edges, P[f"{prefix}.W1.edge"])
            h = self._update(prefix, h, neighbor_term, edge_term)
        return ops.linear(h, P["out.W"], P["out.b"])

    def forward(self, structure, tokens, order, taxon: int | None = None) -> Tensor:
        return self.decode_logits(self.encode(self.featurize(structure), taxon), tokens, order)

    def loss(self, graph: ResidueGraph, codons, order, taxon: int | None = None, label_smoothing: float = 0.0) -> Tensor:
        """Mean teacher-forced cross-entropy over positions."""
        codons = np.asarray(codons, dtype=np.int64)
        logits = self.decode_logits(self.encode(graph, taxon), codons, order)
        return ops.mean(ops.cross_entropy(logits, codons, label_smoothing))

    # ------------------------------------------------------------- inference

    def score(self, structure, taxon: int | None, seq, order=None) -> ScoreResult:
        """Teacher-forced log-likelihood of ``seq``; identity order by default."""
        graph = self.featurize(structure)
        codons = np.asarray(seq.indices if isinstance(seq, CodonSeq) else seq, dtype=np.int64)
        if codons.shape != (graph.length,):
            raise LengthMismatch(f"sequence length {codons.size} != structure length {graph.length}")
        order = np.arange(graph.length) if order is None else check_permutation(order, graph.length)
        logits = self.decode_logits(self.encode(graph, taxon), codons, order).data.astype(np.float64)
        logp = ops._log_softmax(logits, -1)
        per_pos = logp[np.arange(graph.length), codons]
        return ScoreResult(float(per_pos.sum()), per_pos, order)

    def sample(
        self,
        structure,
        taxon: int | None = None,
        temperature: float | None = None,
        order=None,
        fixed: Mapping[int, int] | None = None,
        seed: int | None = None,
        argmax: bool = False,
        mask_stops: bool | None = None,
    ) -> CodonSeq:
        """Draw a codon sequence position by position along a decoding order.

        ``fixed`` clamps positions to given codons; they are decoded first so
        every other position conditions on them. Without ``order`` a fresh
        random permutation is drawn from ``seed``.
        """
        graph = self.featurize(structure)
        L = graph.length
        temperature = self.config.temperature if temperature is None else temperature
        if not argmax and not temperature > 0:
            raise InvalidTemperature(f"temperature must be positive, got {temperature}")
        mask_stops = self.config.mask_stops if mask_stops is None else mask_stops
        rng = np.random.default_rng(seed)
        fixed = {int(p): int(c.index if hasattr(c, "index") else c) for p, c in (fixed or {}).items()}
        for p, c in fixed.items():
            if not 0 <= p < L:
                raise ModelError(f"fixed position {p} outside structure of length {L}")
            if not 0 <= c < NUM_CODONS:
                raise ModelError(f"fixed codon index {c} invalid")
        if order is None:
            order = rng.permutation(L) if not argmax else np.arange(L)
        order = check_permutation(order, L)
        order = np.array([p for p in order if p in fixed] + [p for p in order if p not in fixed], dtype=np.int64)

        enc = self.encode(graph, taxon)
        tokens = np.full(L, MASK_TOKEN, dtype=np.int64)
        for p, c in fixed.items():
            tokens[p] = c
        for p in order:
            if p in fixed:
                continue
            logits = self.decode_logits(enc, tokens, order).data[p].astype(np.float64)
            if mask_stops:
                logits[list(STOP_CODONS)] = -np.inf
            if argmax:
                tokens[p] = int(np.argmax(logits))
            else:
                z = logits / temperature
                prob = np.exp(z - z.max())
                cdf = np.cumsum(prob / prob.sum())
                tokens[p] = int(min(np.searchsorted(cdf, rng.random(), side="right"), NUM_CODONS - 1))
        return CodonSeq(tuple(int(t) for t in tokens))

    def greedy(self, structure, taxon: int | None = None) -> CodonSeq:
        """Argmax decode along the identity order."""
        return self.sample(structure, taxon, argmax=True, order=np.arange(self.featurize(structure).length))

    # ----------------------------------------------------------- checkpoints

    def save(self, path: str | os.PathLike, metadata: Mapping | None = None, include_optimizer: bool = True) -> None:
        arrays = self.params.state_arrays()
        if not include_optimizer:
            arrays = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
        config = {
            "format": "codonmpnn",
            "model": asdict(self.config),
            "optimizer_step": self.params.step,
            "meta": dict(metadata or {}),
        }
        write_checkpoint(path, config, arrays)

    @classmethod
    def load(cls, path: str | os.PathLike) -> tuple["CodonMPNN", dict]:
        config, arrays = read_checkpoint(path)
        if config.get("format") != "codonmpnn":
            raise ModelError(f"{path}: not a model checkpoint")
        model_config = ModelConfig.from_dict(config["model"])
        model = cls(model_config)
        # Keep the stored precision rather than the current default.
        for name, p in model.params.items():
            if name in arrays:
                p.data = p.data.astype(arrays[name].dtype)
        model.params.load_state_arrays(arrays)
        model.params.step = int(config.get("optimizer_step", 0))
        return model, config.get("meta", {})

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, p in self.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()[:16]
