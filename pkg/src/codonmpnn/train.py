"""Training loop: random decoding orders, taxon dropout, validation, checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .corpus import ProteinRecord
from .evaluate import RecoveryReport
from .featurize import ResidueGraph, build_graph
from .model import CodonMPNN, ModelConfig
from .numerics import NumericalFault, Tape, adam_step, ops
from .taxonomy import ClusterAssignment, lookup_label

logger = logging.getLogger(__name__)


class TrainError(ValueError):
    pass


class EmptyValSet(TrainError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    max_steps: int = 1000
    seed: int = 0
    taxon_dropout: float = 0.5
    val_every: int = 100
    checkpoint_dir: str | None = None
    label_smoothing: float = 0.0
    backbone_noise: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.taxon_dropout <= 1.0:
            raise TrainError(f"taxon_dropout must lie in [0, 1], got {self.taxon_dropout}")
        if not self.lr > 0:
            raise TrainError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise TrainError("batch_size must be >= 1")
        if self.max_steps < 0:
            raise TrainError("max_steps must be >= 0")


@dataclass(eq=False)
class Example:
    id: str
    graph: ResidueGraph
    codons: np.ndarray
    taxon: int
    coords: np.ndarray | None = None

    @property
    def length(self) -> int:
        return self.graph.length


def make_examples(
    records: Iterable[ProteinRecord],
    clusters: ClusterAssignment | None,
    knn: int,
) -> list[Example]:
    """Featurize records and resolve their taxon cluster labels."""
    out = []
    for rec in records:
        if clusters is None:
            label = 0
        else:
            label = lookup_label(clusters, rec.tax_id)
        out.append(Example(rec.id, build_graph(rec.coords, knn), np.array(rec.codons.indices, dtype=np.int64), label, rec.coords))
    return out


def corpus_hash(examples: Sequence[Example]) -> str:
    h = hashlib.sha256()
    for ex in examples:
        h.update(ex.id.encode())
        h.update(ex.codons.tobytes())
        h.update(str(ex.taxon).encode())
    return h.hexdigest()[:16]


def train_step(
    model: CodonMPNN, batch: Sequence[Example], rng: np.random.Generator, config: TrainConfig
) -> float:
    """One optimizer step on ``batch``; returns the batch loss (nats/position).

    Each example gets its own uniformly random decoding order and, with
    probability ``taxon_dropout``, the null taxon label.
    """
    null = model.config.null_label
    with Tape() as tape:
        losses = []
        for ex in batch:
            order = rng.permutation(ex.length)
            taxon = null if rng.random() < config.taxon_dropout else ex.taxon
            graph = ex.graph
            if config.backbone_noise > 0:
                noisy = ex.coords + config.backbone_noise * rng.normal(size=ex.coords.shape)
                graph = build_graph(noisy, model.config.knn)
            losses.append(model.loss(graph, ex.codons, order, taxon, config.label_smoothing))
        total = losses[0]
        for loss in losses[1:]:
            total = ops.add(total, loss)
        total = ops.mul(total, np.asarray(1.0 / len(batch), dtype=total.dtype))
        value = total.item()
        if not math.isfinite(value):
            raise NumericalFault(f"non-finite loss {value} at step {model.params.step + 1} on {[ex.id for ex in batch]}")
        grads = tape.backward(total, model.params.params)
    adam_step(model.params, grads, config.lr)
    return value


class ValMetrics(NamedTuple):
    val_loss: float
    codon_rec: float
    aa_rec: float


def evaluate_val(model: CodonMPNN, examples: Sequence[Example], taxon: int | None = "record") -> ValMetrics:
    """Teacher-forced loss and greedy-decode recovery along the identity order.

    ``taxon="record"`` conditions each example on its own label; any other
    value (``None`` for the null token) is applied to every example.
    """
    if not examples:
        raise EmptyValSet("validation set is empty")
    losses = []
    report = RecoveryReport()
    for ex in examples:
        label = ex.taxon if taxon == "record" else taxon
        order = np.arange(ex.length)
        losses.append(model.loss(ex.graph, ex.codons, order, label).item())
        report.add(model.greedy(ex.graph, label), ex.codons)
    return ValMetrics(float(np.mean(losses)), report.codon_recovery, report.aa_recovery)


class Trainer:
    """Stateful training driver with bit-exact checkpoint/resume."""

    def __init__(
        self,
        model: CodonMPNN,
        config: TrainConfig,
        train_examples: Sequence[Example],
        val_examples: Sequence[Example] = (),
    ):
        if not train_examples:
            raise TrainError("training set is empty")
        self.model = model
        self.config = config
        self.train_examples = list(train_examples)
        self.val_examples = list(val_examples)
        self.rng = np.random.default_rng(config.seed)
        self.queue: list[int] = []
        self.best_val = math.inf
        self.history: list[dict] = []
        self._recent: list[float] = []

    @property
    def step(self) -> int:
        return self.model.params.step

    def next_batch(self) -> list[Example]:
        batch = []
        while len(batch) < min(self.config.batch_size, len(self.train_examples)):
            if not self.queue:
                self.queue = self.rng.permutation(len(self.train_examples)).tolist()
            batch.append(self.train_examples[self.queue.pop()])
        return batch

    def step_once(self) -> float:
        loss = train_step(self.model, self.next_batch(), self.rng, self.config)
        self._recent.append(loss)
        return loss

    def metadata(self) -> dict:
        return {
            "step": self.step,
            "seed": self.config.seed,
            "corpus_hash": corpus_hash(self.train_examples),
            "train_config": asdict(self.config),
            "rng_state": self.rng.bit_generator.state,
            "queue": self.queue,
            "best_val": None if math.isinf(self.best_val) else self.best_val,
        }

    def save(self, path: str | os.PathLike) -> None:
        self.model.save(path, self.metadata())

    @classmethod
    def resume(
        cls,
        path: str | os.PathLike,
        train_examples: Sequence[Example],
        val_examples: Sequence[Example] = (),
        config: TrainConfig | None = None,
    ) -> "Trainer":
        model, meta = CodonMPNN.load(path)
        if config is None:
            config = TrainConfig(**meta["train_config"])
        trainer = cls(model, config, train_examples, val_examples)
        if meta.get("corpus_hash") and meta["corpus_hash"] != corpus_hash(trainer.train_examples):
            logger.warning("resuming on a different training corpus than the checkpoint was trained on")
        trainer.rng.bit_generator.state = meta["rng_state"]
        trainer.queue = list(meta.get("queue", []))
        if meta.get("best_val") is not None:
            trainer.best_val = meta["best_val"]
        return trainer

    def _log_point(self) -> dict:
        train_loss = float(np.mean(self._recent)) if self._recent else None
        self._recent = []
        entry = {"step": self.step, "train_loss": train_loss, "val_loss": None, "codon_rec": None, "aa_rec": None}
        if self.val_examples:
            val = evaluate_val(self.model, self.val_examples)
            entry.update(val_loss=val.val_loss, codon_rec=val.codon_rec, aa_rec=val.aa_rec)
        return entry

    def run(self) -> list[dict]:
        """Train to ``max_steps``, validating and checkpointing every ``val_every`` steps."""
        cfg = self.config
        out_dir = cfg.checkpoint_dir
        log_fh = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            log_fh = open(os.path.join(out_dir, "metrics.jsonl"), "a")
            if self.step == 0:
                self.save(os.path.join(out_dir, "initial.cmpn"))
                self.save(os.path.join(out_dir, "last.cmpn"))
        try:
            while self.step < cfg.max_steps:
                self.step_once()
                if self.step % cfg.val_every == 0 or self.step == cfg.max_steps:
                    entry = self._log_point()
                    self.history.append(entry)
                    logger.info("step %d %s", self.step, json.dumps(entry))
                    if log_fh:
                        log_fh.write(json.dumps(entry) + "\n")
                        log_fh.flush()
                    if out_dir:
                        self.save(os.path.join(out_dir, "last.cmpn"))
                        if entry["val_loss"] is not None and entry["val_loss"] < self.best_val:
                            self.best_val = entry["val_loss"]
                            self.save(os.path.join(out_dir, "best.cmpn"))
        finally:
            if log_fh:
                log_fh.close()
        return self.history


def run_training(
    config: TrainConfig,
    train_records: Sequence[ProteinRecord],
    val_records: Sequence[ProteinRecord] = (),
    clusters: ClusterAssignment | None = None,
    model_config: ModelConfig | None = None,
    resume: str | os.PathLike | None = None,
) -> tuple[CodonMPNN, list[dict]]:
    """Featurize, train, and return the final model with its metrics log."""
    model_config = model_config or ModelConfig()
    if clusters is not None:
        model_config.num_taxa = clusters.k
    train_ex = make_examples(train_records, clusters, model_config.knn)
    val_ex = make_examples(val_records, clusters, model_config.knn)
    if resume:
        trainer = Trainer.resume(resume, train_ex, val_ex, config)
    else:
        trainer = Trainer(CodonMPNN(model_config), config, train_ex, val_ex)
    history = trainer.run()
    return trainer.model, history
