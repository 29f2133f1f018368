"""smoothfuzz command line: campaigns, oracle utilities and reports.

Exit codes: 0 ok, 2 configuration error, 3 target error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .config import ConfigError, build_config, dump_config, load_config, parse_override
from .coverage import OversizeInputError, pad_input
from .mutation import magic_solver, top_k
from .orchestrator import (Campaign, incremental_retrain_filter, load_corpus, save_corpus)
from .report import ReportError, format_table, merge_reports
from .surrogate import (TrainingDiverged, evaluate, init_model, input_gradient,
                        load_checkpoint, save_checkpoint, train)
from .targets import ExternalTarget, TargetError, execute, get_target

EXIT_OK, EXIT_CONFIG, EXIT_TARGET, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("smoothfuzz")


@contextmanager
def atomic_dir(dest):
    """Build a directory under a temporary name and rename it into place."""
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{dest.name}.", dir=dest.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if dest.exists():
        old = dest.with_name(f".{dest.name}.old-{os.getpid()}")
        dest.rename(old)
        tmp.rename(dest)
        shutil.rmtree(old)
    else:
        tmp.rename(dest)


def resolve_target(cfg):
    if cfg.target_cmd:
        return ExternalTarget(cfg.target_cmd, cfg.edge_count, cfg.timeout, name=cfg.target or None)
    if not cfg.target:
        raise ConfigError("no target: set --target or --target-cmd")
    try:
        return get_target(cfg.target)
    except KeyError as exc:
        raise TargetError(str(exc.args[0])) from None


def read_seeds(directory, m):
    if not directory:
        return []
    paths = sorted(p for p in Path(directory).iterdir() if p.is_file())
    try:
        return [pad_input(p.read_bytes(), m) for p in paths]
    except OversizeInputError as exc:
        raise ConfigError(f"seed too large: {exc}") from None


def read_input(path, m):
    raw = Path(path).read_bytes() if path else b""
    try:
        return pad_input(raw, m)
    except OversizeInputError as exc:
        raise ConfigError(str(exc)) from None


# -- verbs --------------------------------------------------------------------

def run_fuzz(cfg, out) -> int:
    target = resolve_target(cfg)
    seeds = read_seeds(cfg.seeds_dir, cfg.m)
    camp = Campaign(target, cfg, seeds)
    with atomic_dir(out) as tmp:
        try:
            stats = camp.run()
        finally:
            camp.close()
        name = cfg.target or Path(cfg.target_cmd).name
        save_corpus(camp.corpus, tmp / "corpus", name, cfg.m)
        save_corpus(camp.corpus, tmp / "crashes", name, cfg.m, crashes=True)
        (tmp / "stats.csv").write_text(stats.to_csv(cfg.engine, name))
        (tmp / "config.txt").write_text(dump_config(cfg))
        if camp.model is not None:
            save_checkpoint(camp.model, tmp / "model.ckpt")
    print(f"executions={camp.executions} edges={camp.corpus.edges} seeds={len(camp.corpus)} "
          f"crashes={len(camp.corpus.crashes)} iterations={camp.iteration}")
    return EXIT_OK


def run_train(cfg, out, corpus_dir=None) -> int:
    if corpus_dir:
        corpus, manifest = load_corpus(corpus_dir, cfg.m)
    else:
        camp = Campaign(resolve_target(cfg), cfg, read_seeds(cfg.seeds_dir, cfg.m))
        corpus = camp.bootstrap()
        camp.close()
    rng = np.random.default_rng(cfg.seed)
    data, reduction = incremental_retrain_filter(corpus, rng)
    if reduction.label_count == 0:
        raise ConfigError("corpus covers no edges; nothing to learn")
    model = init_model(cfg.m, reduction.label_count, cfg.hidden_dim,
                       seed=int(rng.integers(2**31)), activation=cfg.activation)
    model, trace = train(model, data, cfg.epochs, cfg.batch_size, cfg.learning_rate)
    metrics = {"samples": len(data), "labels": reduction.label_count,
               "initial_loss": trace[0], "final_loss": trace[-1]}
    if len(data.test_idx):
        metrics.update(evaluate(model, data))
    with atomic_dir(out) as tmp:
        save_checkpoint(model, tmp / "model.ckpt")
        (tmp / "labels.json").write_text(json.dumps(
            {"representative": list(reduction.representative),
             "groups": [list(g) for g in reduction.groups]}) + "\n")
        (tmp / "config.txt").write_text(dump_config(cfg))
    print(json.dumps(metrics))
    return EXIT_OK


def run_gradient(model_path, input_path, neuron, top) -> int:
    try:
        model = load_checkpoint(model_path)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{model_path}: {exc}") from None
    inp = read_input(input_path, model.input_len)
    try:
        g = input_gradient(model, inp, neuron)
    except IndexError as exc:
        raise ConfigError(str(exc)) from None
    locs = top_k(g, top)
    print(json.dumps({"neuron": neuron, "top": [{"loc": i, "grad": float(g[i])} for i in locs]}))
    return EXIT_OK


def run_solve(cfg, input_path, anchor, width, goal_edge, out) -> int:
    target = resolve_target(cfg)
    seed = read_input(input_path, cfg.m)
    try:
        res = magic_solver(target, seed, anchor, width, goal_edge)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if out:
        Path(out).write_bytes(res.best.raw)
    print(json.dumps({"success": res.success, "executions": res.executions,
                      "edges": execute(target, res.best).bitmap.count(),
                      "input": res.best.raw.hex()}))
    return EXIT_OK


def run_report(paths, out=None) -> int:
    try:
        text = format_table(merge_reports(paths))
    except ReportError as exc:
        raise ConfigError(str(exc)) from None
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def _config_flags(p, campaign=False, engine=False):
    g = p.add_argument_group("configuration")
    g.add_argument("--config", metavar="FILE", help="flat key=value config file")
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable, applied last)")
    g.add_argument("--target", help="built-in synthetic target name")
    g.add_argument("--target-cmd", dest="target_cmd", help="external target executable")
    g.add_argument("--edge-count", dest="edge_count", type=int)
    g.add_argument("--timeout", type=float, help="per-execution timeout in seconds")
    g.add_argument("-m", "--input-len", dest="m", type=int, help="input length cap in bytes")
    g.add_argument("--seed", type=int, help="rng seed for the whole run")
    g.add_argument("--workers", type=int, help="parallel executions for external targets")
    g.add_argument("--bootstrap-budget", dest="bootstrap_budget", type=int)
    g.add_argument("--seeds-dir", dest="seeds_dir", help="directory of initial inputs")
    g.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--learning-rate", dest="learning_rate", type=float)
    if engine:
        g.add_argument("--engine", choices=("neuzz", "linear", "baseline"))
    if campaign:
        g.add_argument("--mutation-budget", dest="mutation_budget", type=int)
        g.add_argument("--iterations", type=int)
        g.add_argument("--neurons-per-iter", dest="neurons_per_iter", type=int)
        g.add_argument("--seeds-per-neuron", dest="seeds_per_neuron", type=int)
        g.add_argument("--magic-anchors", dest="magic_anchors", type=int)


_CONFIG_KEYS = ("target", "target_cmd", "edge_count", "timeout", "m", "seed", "workers",
                "bootstrap_budget", "seeds_dir", "hidden_dim", "epochs", "learning_rate",
                "engine", "mutation_budget", "iterations", "neurons_per_iter",
                "seeds_per_neuron", "magic_anchors")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothfuzz", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="VERB")

    p = sub.add_parser("fuzz", help="run a campaign (gradient engine by default)")
    _config_flags(p, campaign=True, engine=True)
    p.add_argument("--out", default="smoothfuzz-out", help="artifact directory")

    p = sub.add_parser("baseline", help="run the random-mutation engine only")
    _config_flags(p, campaign=True)
    p.add_argument("--out", default="smoothfuzz-out")

    p = sub.add_parser("train", help="train a surrogate on a corpus")
    _config_flags(p, engine=True)
    p.add_argument("--corpus", help="saved corpus directory (default: bootstrap the target)")
    p.add_argument("--out", default="smoothfuzz-model")

    p = sub.add_parser("gradient", help="input gradient of one output neuron")
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--input", help="input file (default: empty input)")
    p.add_argument("--neuron", type=int, required=True)
    p.add_argument("--top", type=int, default=10)

    p = sub.add_parser("solve-magic", help="exhaustive byte search from an anchor")
    _config_flags(p)
    p.add_argument("--input", help="seed input file (default: empty input)")
    p.add_argument("--anchor", type=int, required=True)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--goal-edge", dest="goal_edge", type=int)
    p.add_argument("--out", help="write the best input here")

    p = sub.add_parser("report", help="merge stats CSVs into one long table")
    p.add_argument("stats", nargs="+", help="stats.csv files")
    p.add_argument("--out", help="output file (default: stdout)")
    return parser


def config_from_args(args, **fixed):
    layers = []
    if args.config:
        layers.append(load_config(args.config))
    layers.append({k: getattr(args, k) for k in _CONFIG_KEYS if hasattr(args, k)})
    layers.append(dict(parse_override(item) for item in args.set))
    layers.append(fixed)
    return build_config(*layers)


def dispatch(args) -> int:
    if args.verb == "report":
        return run_report(args.stats, args.out)
    if args.verb == "gradient":
        return run_gradient(args.model, args.input, args.neuron, args.top)
    if args.verb == "baseline":
        return run_fuzz(config_from_args(args, engine="baseline"), args.out)
    cfg = config_from_args(args)
    if args.verb == "fuzz":
        return run_fuzz(cfg, args.out)
    if args.verb == "train":
        return run_train(cfg, args.out, args.corpus)
    return run_solve(cfg, args.input, args.anchor, args.width, args.goal_edge, args.out)


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"smoothfuzz: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TargetError as exc:
        print(f"smoothfuzz: target error: {exc}", file=sys.stderr)
        return EXIT_TARGET
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"smoothfuzz: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
