"""Command-line entry point: ``codonmpnn {partition,train,sample,score,eval}``.

Exit codes: 0 ok, 2 unreadable input or taxonomy parse error, 3 data error,
4 numerical fault, 5 unknown taxon under ``--strict-taxon``.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import IO, Iterator, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .corpus import CorpusError, apply_split, filter_plddt, read_records, read_split
from .evaluate import EvaluateError, PairEvalResult, RecoveryReport, read_pairs, synonymous_pair_eval
from .featurize import FEATURE_VERSION, FeaturizeError, build_graph
from .genetic_code import GeneticCodeError, build_usage_table, encode_triplet, translate_seq
from .model import CodonMPNN, ModelConfig, ModelError
from .numerics import NumericalFault, set_precision
from .numerics.checkpoint import VERSION as CHECKPOINT_VERSION
from .numerics.checkpoint import CheckpointError
from .taxonomy import TaxonomyError, partition, partition_stats, read_cluster_tsv, read_taxdump, write_cluster_tsv
from .train import TrainConfig, TrainError, run_training

logger = logging.getLogger("codonmpnn")

EXIT_INPUT = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_TAXON = 5


class StrictTaxonError(Exception):
    pass


# ------------------------------------------------------------------ helpers


@contextlib.contextmanager
def _output(path: str) -> Iterator[IO[str]]:
    if path == "-":
        yield sys.stdout
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            yield fh


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:12]


def _featurize_all(records, knn: int, threads: int):
    if threads <= 1:
        return [build_graph(r.coords, knn) for r in records]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(lambda r: build_graph(r.coords, knn), records))


def _parse_fixed(spec: str | None) -> dict[int, int]:
    """``"0=AUG,5=GGC"`` -> {0: 14, 5: ...}."""
    if not spec:
        return {}
    out = {}
    for item in spec.split(","):
        pos, _, triplet = item.partition("=")
        try:
            out[int(pos)] = encode_triplet(triplet.strip()).index
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad --fixed entry {item!r}: {exc}") from None
    return out


def _resolve_taxon(args, model: CodonMPNN, clusters, record=None) -> int:
    """Map ``--taxon`` to a model label, falling back to the null label."""
    null = model.config.null_label
    choice = args.taxon
    if choice == "none":
        return null
    if choice == "record":
        tax_id = None if record is None else record.tax_id
        if tax_id is None:
            return null
    else:
        try:
            tax_id = int(choice)
        except ValueError:
            raise argparse.ArgumentTypeError(f"--taxon must be a tax id, 'none' or 'record', got {choice!r}") from None
    if clusters is not None:
        label = clusters.labels.get(tax_id)
    else:
        # Without a cluster map the value is taken as a cluster label.
        label = tax_id if 0 <= tax_id < model.config.num_taxa else None
    if label is None:
        if args.strict_taxon:
            raise StrictTaxonError(f"unknown taxon {tax_id}")
        logger.warning("taxon %s unknown; using the null label", tax_id)
        return null
    return label


def _load_model(path: str, precision_flag: str | None) -> CodonMPNN:
    model, meta = CodonMPNN.load(path)
    if precision_flag is not None:
        model.params.astype(np.float64 if precision_flag == "f64" else np.float32)
    logger.info("loaded %s (step %s, fingerprint %s)", path, meta.get("step"), model.fingerprint())
    return model


def _records(path: str):
    return list(read_records(path))


# ----------------------------------------------------------------- commands


def cmd_partition(args) -> int:
    tree = read_taxdump(args.nodes)
    assignment = partition(tree, args.k)
    with _output(args.out) as fh:
        write_cluster_tsv(assignment, fh)
    stats = partition_stats(assignment)
    logger.info("partitioned %d taxa into %d clusters (max %d)", assignment.n, assignment.k, stats.max_size)
    if args.stats:
        with _output(args.stats) as fh:
            json.dump(stats.to_dict(), fh, indent=2)
            fh.write("\n")
    return 0


def cmd_train(args) -> int:
    records = _records(args.data)
    if args.split:
        train, val, _ = apply_split(records, read_split(args.split))
    else:
        train, val = records, _records(args.val) if args.val else []
    if args.plddt_threshold is not None:
        res = filter_plddt(train, args.plddt_threshold)
        logger.info("pLDDT filter kept %d records, dropped %d", len(res.kept), res.dropped)
        train = res.kept
    clusters = read_cluster_tsv(args.clusters) if args.clusters else None
    model_config = ModelConfig(
        hidden_dim=args.hidden,
        encoder_layers=args.layers,
        decoder_layers=args.layers,
        knn=args.knn,
        num_taxa=clusters.k if clusters else 1,
        seed=args.seed,
    )
    train_config = TrainConfig(
        lr=args.lr,
        batch_size=args.batch_size,
        max_steps=args.steps,
        seed=args.seed,
        taxon_dropout=args.taxon_dropout,
        val_every=args.val_every,
        checkpoint_dir=args.out,
        label_smoothing=args.label_smoothing,
        backbone_noise=args.backbone_noise,
    )
    model, history = run_training(train_config, train, val, clusters, model_config, resume=args.resume)
    if history:
        logger.info("final: %s", json.dumps(history[-1]))
    return 0


def cmd_sample(args) -> int:
    model = _load_model(args.ckpt, args.precision)
    clusters = read_cluster_tsv(args.clusters) if args.clusters else None
    fixed = _parse_fixed(args.fixed)
    records = _records(args.data)
    graphs = _featurize_all(records, model.config.knn, args.threads)
    with _output(args.out) as fh:
        for r_idx, (rec, graph) in enumerate(zip(records, graphs)):
            label = _resolve_taxon(args, model, clusters, rec)
            for s_idx in range(args.n):
                seed = int(np.random.SeedSequence([args.seed, r_idx, s_idx]).generate_state(1)[0])
                seq = model.sample(graph, label, temperature=args.temperature, fixed=fixed, seed=seed, argmax=args.argmax)
                row = {
                    "record_id": rec.id,
                    "sample_idx": s_idx,
                    "codons": seq.nucleotides,
                    "aa": translate_seq(seq, allow_internal_stop=True),
                    "logp": model.score(graph, label, seq).total,
                }
                fh.write(json.dumps(row) + "\n")
    return 0


def cmd_score(args) -> int:
    model = _load_model(args.ckpt, args.precision)
    clusters = read_cluster_tsv(args.clusters) if args.clusters else None
    records = _records(args.data)
    graphs = _featurize_all(records, model.config.knn, args.threads)
    with _output(args.out) as fh:
        for rec, graph in zip(records, graphs):
            label = _resolve_taxon(args, model, clusters, rec)
            res = model.score(graph, label, rec.codons)
            row = {"record_id": rec.id, "length": len(rec), "taxon_label": label, "logp": res.total}
            if args.per_position:
                row["per_position"] = res.per_position.tolist()
            fh.write(json.dumps(row) + "\n")
    return 0


def cmd_eval(args) -> int:
    model = _load_model(args.ckpt, args.precision)
    clusters = read_cluster_tsv(args.clusters) if args.clusters else None
    records = _records(args.data)
    if args.pairs:
        return _eval_pairs(args, model, clusters, records)
    usage_src = _records(args.usage_data) if args.usage_data else records
    usage = build_usage_table(r.codons for r in usage_src)
    graphs = _featurize_all(records, model.config.knn, args.threads)
    report = RecoveryReport()
    for r_idx, (rec, graph) in enumerate(zip(records, graphs)):
        label = _resolve_taxon(args, model, clusters, rec)
        if args.decode == "greedy":
            gen = model.greedy(graph, label)
        else:
            seed = int(np.random.SeedSequence([args.seed, r_idx]).generate_state(1)[0])
            gen = model.sample(graph, label, temperature=args.temperature, seed=seed)
        report.add(gen, rec.codons, usage)
    summary = report.to_dict()
    if args.self_check:
        ok = report.self_check()
        summary["self_check"] = ok
        if not ok:
            logger.error("per-amino-acid rows do not re-aggregate to the global metrics")
            return EXIT_DATA
    with _output(args.report) as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    if args.tsv:
        with _output(args.tsv) as fh:
            report.write_tsv(fh)
    logger.info(
        "codon recovery %.4f, aa recovery %.4f, naive %.4f, oracle %.4f",
        report.codon_recovery,
        report.aa_recovery,
        report.naive_codon_recovery,
        report.oracle_codon_recovery,
    )
    return 0


def _eval_pairs(args, model, clusters, records) -> int:
    pairs = read_pairs(args.pairs)
    by_id = {r.id: r for r in records}
    labels = {}
    for p in pairs:
        key = p.structure_id if p.structure_id is not None else p.id
        if key not in by_id:
            raise EvaluateError(f"pair {p.id}: no structure {key!r} in {args.data}")
        labels[p.id] = _resolve_taxon(args, model, clusters, by_id[key])
    structures = {r.id: r.coords for r in records}
    rows = []
    for p in pairs:
        rows.extend(synonymous_pair_eval(model, [p], structures, taxon=labels[p.id]).rows)
    result = PairEvalResult(rows)
    with _output(args.report) as fh:
        json.dump(result.to_dict(), fh, indent=2)
        fh.write("\n")
    if args.tsv:
        with _output(args.tsv) as fh:
            result.write_tsv(fh)
    logger.info("pairs correct %d/%d (p=%.3g)", result.n_correct, len(rows), result.binomial_p_value())
    return 0


# ------------------------------------------------------------------- parser


def _version_text() -> str:
    return (
        f"codonmpnn {__version__}\n"
        f"checkpoint format CMPN v{CHECKPOINT_VERSION}\n"
        f"feature dump format CMPF v{FEATURE_VERSION}\n"
        "cluster map format TSV v1"
    )


class _VersionAction(argparse.Action):
    def __init__(self, option_strings, dest, **kw):
        super().__init__(option_strings, dest, nargs=0, help="print package and file-format versions")

    def __call__(self, parser, namespace, values, option_string=None):
        print(_version_text())
        parser.exit()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--precision", choices=("f32", "f64"), default=None)
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = argparse.ArgumentParser(prog="codonmpnn", description="Structure- and host-conditioned codon design.")
    parser.add_argument("--version", action=_VersionAction)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", parents=[common], help="cluster a taxonomy into k balanced groups")
    p.add_argument("--nodes", required=True, help="NCBI nodes.dmp")
    p.add_argument("-k", type=int, default=20000)
    p.add_argument("--out", required=True, help="cluster TSV path or '-'")
    p.add_argument("--stats", help="write partition statistics JSON here")
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True, help="records JSONL")
    p.add_argument("--val", help="validation records JSONL")
    p.add_argument("--split", help="split JSON applied to --data")
    p.add_argument("--clusters", help="cluster TSV from 'partition'")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--knn", type=int, default=48)
    p.add_argument("--taxon-dropout", type=float, default=0.5)
    p.add_argument("--val-every", type=int, default=100)
    p.add_argument("--label-smoothing", type=float, default=0.0)
    p.add_argument("--backbone-noise", type=float, default=0.0, help="std of Gaussian coordinate noise in angstrom")
    p.add_argument("--plddt-threshold", type=float, default=0.9)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    def inference(p):
        p.add_argument("--ckpt", required=True)
        p.add_argument("--data", required=True, help="records JSONL")
        p.add_argument("--clusters", help="cluster TSV mapping tax ids to labels")
        p.add_argument("--taxon", default="record", help="TAXID, 'none', or 'record' (each record's own tax_id)")
        p.add_argument("--strict-taxon", action="store_true", help="fail on unknown taxa instead of using the null label")

    p = sub.add_parser("sample", parents=[common], help="sample codon sequences")
    inference(p)
    p.add_argument("-n", type=int, default=1)
    p.add_argument("--temperature", type=float, default=0.1)
    p.add_argument("--fixed", help="clamped positions, e.g. '0=AUG,5=GGC'")
    p.add_argument("--argmax", action="store_true")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("score", parents=[common], help="log-likelihood of each record's codons")
    inference(p)
    p.add_argument("--per-position", action="store_true")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", parents=[common], help="recovery metrics or synonymous-pair ranking")
    inference(p)
    p.add_argument("--pairs", help="synonymous pairs JSONL; structures come from --data")
    p.add_argument("--usage-data", help="corpus for codon usage baselines (default: --data)")
    p.add_argument("--decode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--temperature", type=float, default=0.1)
    p.add_argument("--report", default="-", help="JSON report path or '-'")
    p.add_argument("--tsv", help="per-amino-acid (or per-pair) TSV path")
    p.add_argument("--self-check", action="store_true", help="verify per-aa rows re-aggregate to the global metrics")
    p.set_defaults(func=cmd_eval)
    return parser


def _resolved_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    if args.precision:
        set_precision(args.precision)
    config = _resolved_config(args)
    print(f"config {json.dumps(config, sort_keys=True)} hash={_config_hash(config)}", file=sys.stderr)
    try:
        with threadpool_limits(limits=max(1, args.threads)):
            return args.func(args)
    except FileNotFoundError as exc:
        logger.error("cannot read %s", exc.filename)
        return EXIT_INPUT
    except TaxonomyError as exc:
        logger.error("taxonomy: %s", exc)
        return EXIT_INPUT
    except argparse.ArgumentTypeError as exc:
        logger.error("%s", exc)
        return EXIT_INPUT
    except StrictTaxonError as exc:
        logger.error("%s", exc)
        return EXIT_TAXON
    except NumericalFault as exc:
        logger.error("numerical fault: %s", exc)
        return EXIT_NUMERIC
    except (
        CorpusError,
        GeneticCodeError,
        EvaluateError,
        FeaturizeError,
        ModelError,
        CheckpointError,
        TrainError,
    ) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
