"""Command-line surface: train, complete, classify, generate, oracle, eval.

Every run takes an explicit seed (defaulted, always echoed), writes its
fully-resolved configuration to logs/, and lays artifacts out under the
output directory as model/, metrics/, samples/, logs/.  Metric files are
CSV; each report also renders a PNG next to it.  Outputs carry no
timestamps, so a rerun with the same seed is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import figures
from .gibbs import exclusion_blocks_for_predicates
from .kb import build_signature, load_kb, load_labeled_atoms, save_world
from .modelio import load_model, save_model
from .oracle import (
    DEFAULT_MAX_ATOMS,
    all_world_scores,
    exact_log_likelihood,
    log_partition_of_scores,
)
from .potentials import IndicatorPotential, batched_global_potentials, world_score
from .tasks import (
    SamplerConfig,
    classify_triples,
    collect_generations,
    kbc_metrics,
    query_marginals,
    rank_all,
)
from .training import TrainConfig, train


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except Exception as exc:
        print(f"nmln {args.command}: error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nmln",
        description="Relational world models with neural fragment potentials.",
    )
    sub = parser.add_subparsers(dest="command")

    def common(p, kb=True):
        p.add_argument("--signature", required=True, help="signature file")
        if kb:
            p.add_argument("--kb", required=True, help="world file of true atoms")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=0)

    def sampler_flags(p):
        p.add_argument("--mode", default="blocked", choices=["sequential", "blocked"])
        p.add_argument("--chains", type=int, default=10)
        p.add_argument("--burn-in", type=int, default=500)
        p.add_argument("--sweeps", type=int, default=1000)

    def train_flags(p):
        p.add_argument("--config", help="key=value training config file")
        p.add_argument("--k", type=int, default=2)
        p.add_argument("--hidden", default="75,50", help="comma-separated widths")
        p.add_argument("--heads", type=int, default=1)
        p.add_argument("--activation", default="relu",
                       choices=["relu", "sigmoid", "identity"])
        p.add_argument("--embedding-dim", type=int, default=None)
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
        p.add_argument("--pi-n", type=float, default=0.0)
        p.add_argument("--train-chains", type=int, default=10)
        p.add_argument("--sweeps-per-update", type=int, default=2)
        p.add_argument("--grad-clip", type=float, default=10.0)
        p.add_argument("--exact", action="store_true",
                       help="exact expectations by enumeration (tiny domains)")
        p.add_argument("--schedule", default="auto",
                       choices=["auto", "sequential", "blocked"])
        p.add_argument("--neg-sample-rate", type=float, default=None)
        p.add_argument("--checkpoint-every", type=int, default=None)
        p.add_argument("--indicators", help="file of `weight formula` lines")

    p = sub.add_parser("train", help="fit a model to a KB by maximum likelihood")
    common(p)
    train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("complete", help="rank test facts against corruptions")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True, help="file of test atoms")
    p.add_argument("--hits", default="1,3,10")
    sampler_flags(p)
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("classify", help="threshold triples into true/false")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--valid", required=True, help="labeled validation atoms")
    p.add_argument("--test", required=True, help="labeled test atoms")
    sampler_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("generate", help="train and collect sampled structures")
    common(p)
    train_flags(p)
    p.add_argument("--top-n", type=int, default=20)
    p.add_argument("--last-n", type=int, default=None,
                   help="count only the last N snapshots")
    p.add_argument("--exactly-one", default=None,
                   help="comma list of predicates, one true per constant tuple")
    p.add_argument("--at-most-one", default=None,
                   help="comma list of predicates, at most one true per tuple")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("oracle", help="exact partition function and marginals")
    common(p, kb=False)
    p.add_argument("--model", required=True)
    p.add_argument("--full-distribution", action="store_true")
    p.add_argument("--max-atoms", type=int, default=DEFAULT_MAX_ATOMS)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("eval", help="score a KB under a trained model")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--max-atoms", type=int, default=DEFAULT_MAX_ATOMS)
    p.set_defaults(func=cmd_eval)

    return parser


# ---------------------------------------------------------------------------
# Plumbing


def _outdirs(out: str) -> dict[str, Path]:
    root = Path(out)
    dirs = {name: root / name for name in ("model", "metrics", "samples", "logs")}
    for d in dirs.values():
        d.mkdir(parents=True, exist_ok=True)
    return dirs


def _echo_config(args, dirs) -> None:
    skip = {"func", "command"}
    items = sorted(
        (k, v) for k, v in vars(args).items() if k not in skip
    )
    lines = [f"{k}={v}" for k, v in items]
    (dirs["logs"] / "config.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        print(line)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _parse_hidden(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(x) for x in text.split(","))


def _load_indicators(path) -> tuple[IndicatorPotential, ...]:
    out = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        weight, formula = line.split(None, 1)
        out.append(IndicatorPotential.parse(formula, float(weight)))
    return tuple(out)


_CONFIG_KEYS = {
    "k": int,
    "heads": int,
    "epochs": int,
    "sweeps_per_update": int,
    "train_chains": int,
    "checkpoint_every": int,
    "embedding_dim": int,
    "lr": float,
    "pi_n": float,
    "grad_clip": float,
    "neg_sample_rate": float,
    "hidden": str,
    "activation": str,
    "optimizer": str,
    "schedule": str,
    "exact": lambda v: v.lower() in ("1", "true", "yes"),
}


def _apply_config_file(args) -> None:
    if not getattr(args, "config", None):
        return
    for raw in Path(args.config).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if key not in _CONFIG_KEYS:
            raise ValueError(f"unknown config key {key!r}")
        setattr(args, key, _CONFIG_KEYS[key](value))


def _train_config(args) -> TrainConfig:
    indicators = ()
    if getattr(args, "indicators", None):
        indicators = _load_indicators(args.indicators)
    return TrainConfig(
        epochs=args.epochs,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        pi_n=args.pi_n,
        chains=args.train_chains,
        sweeps_per_update=args.sweeps_per_update,
        seed=args.seed,
        grad_clip=args.grad_clip,
        exact_expectations=args.exact,
        schedule_mode=args.schedule,
        neg_sample_rate=args.neg_sample_rate,
        checkpoint_every=args.checkpoint_every,
        k=args.k,
        hidden=_parse_hidden(args.hidden),
        heads=args.heads,
        activation=args.activation,
        embedding_dim=args.embedding_dim,
        indicators=indicators,
    )


def _report_writer(dirs):
    rows: list[dict] = []

    def cb(report):
        rows.append(report.row())

    def flush():
        if not rows:
            return
        keys = sorted(set().union(*(r.keys() for r in rows)), key=str)
        keys = ["epoch"] + [k for k in keys if k != "epoch"]
        _write_csv(
            dirs["metrics"] / "training_log.csv",
            keys,
            [[r.get(k, "") for k in keys] for r in rows],
        )
        figures.save_training_curves(rows, dirs["metrics"] / "training_curves.png")

    return cb, flush


# ---------------------------------------------------------------------------
# Subcommands


def cmd_train(args) -> int:
    _apply_config_file(args)
    dirs = _outdirs(args.out)
    _echo_config(args, dirs)
    signature = build_signature(args.signature, [args.kb])
    kb = load_kb(args.kb, signature)
    config = _train_config(args)
    report_cb, flush = _report_writer(dirs)

    def checkpoint_cb(epoch, model):
        save_model(model, dirs["model"] / f"checkpoint_{epoch + 1:05d}.json")

    model = train(kb, config, report_cb=report_cb, checkpoint_cb=checkpoint_cb)
    flush()
    save_model(model, dirs["model"] / "model.json")
    print(f"model written to {dirs['model'] / 'model.json'}")
    return 0


def cmd_complete(args) -> int:
    dirs = _outdirs(args.out)
    _echo_config(args, dirs)
    signature = build_signature(args.signature, [args.kb, args.test])
    kb = load_kb(args.kb, signature)
    model = load_model(args.model, signature)
    test_atoms = [idx for idx, _ in load_labeled_atoms(args.test, signature)]
    config = SamplerConfig(
        mode=args.mode, chains=args.chains, burn_in=args.burn_in,
        sweeps=args.sweeps, seed=args.seed,
    )
    results = rank_all(test_atoms, model, kb, config)
    hits = tuple(int(x) for x in args.hits.split(","))
    metrics = kbc_metrics(results, hits)
    _write_csv(
        dirs["metrics"] / "ranking.csv",
        ["atom", "n_corruptions", "rank", "reciprocal_rank"],
        [
            [signature.atom_label(r.test_atom), r.n_corruptions, r.rank,
             r.reciprocal_rank]
            for r in results
        ],
    )
    _write_csv(
        dirs["metrics"] / "summary.csv",
        ["metric", "value"],
        [[k, v] for k, v in sorted(metrics.items())],
    )
    figures.save_rank_histogram(
        [r.rank for r in results], dirs["metrics"] / "rank_histogram.png"
    )
    for k, v in sorted(metrics.items()):
        print(f"{k}\t{v:.4f}")
    return 0


def cmd_classify(args) -> int:
    dirs = _outdirs(args.out)
    _echo_config(args, dirs)
    signature = build_signature(args.signature, [args.kb, args.valid, args.test])
    kb = load_kb(args.kb, signature)
    model = load_model(args.model, signature)
    valid = load_labeled_atoms(args.valid, signature)
    test = load_labeled_atoms(args.test, signature)
    for name, items in (("valid", valid), ("test", test)):
        if any(label is None for _, label in items):
            raise ValueError(f"{name} file needs a 0/1 label on every line")
    config = SamplerConfig(
        mode=args.mode, chains=args.chains, burn_in=args.burn_in,
        sweeps=args.sweeps, seed=args.seed,
    )
    queries = sorted({idx for idx, _ in valid} | {idx for idx, _ in test})
    marg = query_marginals(model, kb, queries, config)
    score_of = dict(zip(queries, marg))

    def scored(items):
        return [
            (signature.atom_of_index(idx)[0], float(score_of[idx]), label)
            for idx, label in items
        ]

    accuracy, thresholds = classify_triples(scored(test), scored(valid))
    _write_csv(
        dirs["metrics"] / "scores.csv",
        ["atom", "relation", "score", "label", "split"],
        [
            [signature.atom_label(idx), signature.atom_of_index(idx)[0],
             float(score_of[idx]), label, split]
            for split, items in (("valid", valid), ("test", test))
            for idx, label in items
        ],
    )
    _write_csv(
        dirs["metrics"] / "thresholds.csv",
        ["relation", "threshold"],
        [[rel, t] for rel, t in sorted(thresholds.items())],
    )
    _write_csv(dirs["metrics"] / "summary.csv", ["metric", "value"],
               [["accuracy", accuracy]])
    print(f"accuracy\t{accuracy:.4f}")
    return 0


def cmd_generate(args) -> int:
    _apply_config_file(args)
    dirs = _outdirs(args.out)
    _echo_config(args, dirs)
    signature = build_signature(args.signature, [args.kb])
    kb = load_kb(args.kb, signature)
    config = _train_config(args)
    constraints = []
    if args.exactly_one:
        constraints += exclusion_blocks_for_predicates(
            signature, args.exactly_one.split(","), "exactly-one"
        )
    if args.at_most_one:
        constraints += exclusion_blocks_for_predicates(
            signature, args.at_most_one.split(","), "at-most-one"
        )
    snapshots: list[np.ndarray] = []
    report_cb, flush = _report_writer(dirs)
    model = train(
        kb,
        config,
        report_cb=report_cb,
        chain_cb=lambda epoch, bits: snapshots.append(bits.copy()),
        constraints=constraints or None,
    )
    flush()
    save_model(model, dirs["model"] / "model.json")
    top = collect_generations(snapshots, signature, args.top_n, last_n=args.last_n)
    labels = []
    for i, (count, world) in enumerate(top):
        name = f"structure_{i:03d}"
        save_world(world, dirs["samples"] / f"{name}.txt")
        labels.append(name)
    _write_csv(
        dirs["samples"] / "frequencies.csv",
        ["structure", "count", "atoms"],
        [
            [labels[i], count, ";".join(world.true_atoms())]
            for i, (count, world) in enumerate(top)
        ],
    )
    figures.save_frequencies(
        labels, [c for c, _ in top], dirs["samples"] / "frequencies.png"
    )
    print(f"{len(top)} structures written to {dirs['samples']}")
    return 0


def cmd_oracle(args) -> int:
    dirs = _outdirs(args.out)
    _echo_config(args, dirs)
    model = load_model(args.model)
    signature = model.signature
    scores = all_world_scores(model, args.max_atoms)
    logz = log_partition_of_scores(scores)
    probs = np.exp(scores - logz)
    marginals = np.zeros(signature.n_atoms)
    for j in range(signature.n_atoms):
        mask = (np.arange(scores.size) >> j) & 1
        marginals[j] = probs[mask == 1].sum()
    labels = [signature.atom_label(i) for i in range(signature.n_atoms)]
    _write_csv(
        dirs["metrics"] / "oracle.csv",
        ["quantity", "value"],
        [["log_partition", logz]]
        + [[f"marginal:{label}", marginals[i]] for i, label in enumerate(labels)],
    )
    figures.save_marginals(marginals, labels, dirs["metrics"] / "marginals.png")
    if args.full_distribution:
        _write_csv(
            dirs["metrics"] / "distribution.csv",
            ["world_index", "probability"],
            [[i, p] for i, p in enumerate(probs)],
        )
    print(f"log_partition\t{logz:.6f}")
    return 0


def cmd_eval(args) -> int:
    dirs = _outdirs(args.out)
    _echo_config(args, dirs)
    signature = build_signature(args.signature, [args.kb])
    kb = load_kb(args.kb, signature)
    model = load_model(args.model, signature)
    phi = batched_global_potentials(model, kb.bits[None, :])[0]
    score = world_score(kb, model)
    rows = [["score", score]]
    rows += [[f"phi_{i}", float(v)] for i, v in enumerate(phi)]
    if signature.n_atoms <= args.max_atoms:
        rows.append(["log_likelihood", exact_log_likelihood(model, kb)])
    _write_csv(dirs["metrics"] / "eval.csv", ["metric", "value"], rows)
    figures.save_potential_bars(phi, dirs["metrics"] / "potentials.png")
    print(f"score\t{score:.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
