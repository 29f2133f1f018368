"""Campaign loop: bootstrap with random mutation, then repeatedly train the
surrogate, mutate along its input gradients and keep new-coverage inputs."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coverage import (ByteInput, EdgeBitmap, LabelReduction, bitmap_matrix,
                       build_reduction, has_new_coverage, pad_input, reduce_matrix)
from .mutation import MutationSchedule, generate_mutations, magic_solver, top_k
from .surrogate import TrainingSet, evaluate, init_model, input_gradient, train
from .targets import CRASH, ExecutionRecord, TargetProgram, execute

log = logging.getLogger(__name__)

ENGINES = ("neuzz", "linear", "baseline")
ORIGINS = ("bootstrap", "gradient", "retained")
STATS_COLUMNS = ("execution_count", "edges", "seeds", "crashes", "iteration", "model_accuracy")
STATS_VERSION = 1
MAX_SUBSTITUTIONS = 32


class CampaignComplete(Exception):
    """No label is left for the gradient step to flip."""


@dataclass
class CampaignConfig:
    target: str = ""
    target_cmd: str = ""
    edge_count: int = 65536
    timeout: float = 1.0
    m: int = 10240
    bootstrap_budget: int = 50000
    mutation_budget: int = 1_000_000
    iterations: int = 1
    neurons_per_iter: int = 100
    seeds_per_neuron: int = 2
    epochs: int = 50
    hidden_dim: int = 4096
    batch_size: int = 32
    learning_rate: float = 1e-3
    schedule_iterations: int = 10
    growth_base: int = 2
    magnitude_steps: int = 256
    magic_width: int = 4
    magic_anchors: int = 8
    engine: str = "neuzz"
    seed: int = 0
    workers: int = 0
    seeds_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("m", "bootstrap_budget", "mutation_budget", "iterations",
                     "neurons_per_iter", "seeds_per_neuron", "epochs", "hidden_dim",
                     "batch_size", "schedule_iterations", "growth_base", "magnitude_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if min(self.magic_width, self.magic_anchors, self.workers) < 0:
            raise ValueError("magic_width, magic_anchors and workers must be >= 0")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")

    @property
    def schedule(self) -> MutationSchedule:
        return MutationSchedule(self.schedule_iterations, self.growth_base, self.magnitude_steps)

    @property
    def activation(self) -> str:
        return "identity" if self.engine == "linear" else "relu"

    def replace(self, **changes) -> "CampaignConfig":
        return dataclasses.replace(self, **changes)


@dataclass
class Seed:
    input: ByteInput
    bitmap: EdgeBitmap
    origin: str
    admitted_at: int


@dataclass
class Corpus:
    seeds: list = field(default_factory=list)
    global_coverage: EdgeBitmap | None = None
    crashes: list = field(default_factory=list)
    _crash_keys: set = field(default_factory=set, repr=False)

    def __len__(self):
        return len(self.seeds)

    def offer(self, rec: ExecutionRecord, origin: str, executions: int) -> bool:
        """Admit ``rec`` if it covers a raw edge not yet in the corpus."""
        if rec.verdict == CRASH:
            key = rec.bitmap.covered.tobytes()
            if key not in self._crash_keys:
                self._crash_keys.add(key)
                self.crashes.append(Seed(rec.input, rec.bitmap, origin, executions))
                log.info("crash #%d at execution %d", len(self.crashes), executions)
        if self.global_coverage is None:
            self.global_coverage = EdgeBitmap.empty(rec.bitmap.edge_count)
        is_new, self.global_coverage = has_new_coverage(rec.bitmap, self.global_coverage)
        if is_new:
            self.seeds.append(Seed(rec.input, rec.bitmap, origin, executions))
        return is_new

    @property
    def edges(self) -> int:
        return 0 if self.global_coverage is None else self.global_coverage.count()


@dataclass
class CampaignStats:
    rows: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)

    def record(self, executions, corpus: Corpus, iteration, model_accuracy=None):
        self.rows.append((executions, corpus.edges, len(corpus), len(corpus.crashes),
                          iteration, model_accuracy))

    def to_csv(self, engine: str = "", target: str = "") -> str:
        lines = [f"# smoothfuzz-stats v{STATS_VERSION} engine={engine} target={target}",
                 ",".join(STATS_COLUMNS)]
        for ex, edges, seeds, crashes, it, acc in self.rows:
            acc_s = "" if acc is None or not math.isfinite(acc) else f"{acc:.6f}"
            lines.append(f"{ex},{edges},{seeds},{crashes},{it},{acc_s}")
        return "\n".join(lines) + "\n"


def incremental_retrain_filter(corpus: Corpus, rng=None):
    """Training set from the retained seeds, relabelled from scratch.

    Only coverage-increasing inputs live in the corpus, so this is the
    filtered old data plus every new-coverage input. Returns
    ``(TrainingSet, LabelReduction)``.
    """
    if not len(corpus):
        raise ValueError("corpus is empty")
    mat = bitmap_matrix([s.bitmap for s in corpus.seeds])
    reduction = build_reduction(mat)
    X = np.stack([s.input.array for s in corpus.seeds])
    Y = reduce_matrix(mat, reduction)
    return TrainingSet.split(X, Y, rng), reduction


def select_targets(corpus: Corpus, reduction: LabelReduction, config: CampaignConfig,
                   rng, model=None) -> list[tuple[int, int]]:
    """Sample (neuron, seed index) pairs to differentiate.

    A label is a target for the seeds that do not cover its representative
    edge. Up to ``neurons_per_iter`` such labels are drawn without
    replacement; each gets ``seeds_per_neuron`` seeds drawn from the seeds
    lacking it (with replacement when there are too few).
    """
    if not len(corpus):
        raise ValueError("corpus is empty")
    mat = bitmap_matrix([s.bitmap for s in corpus.seeds])
    if reduction.label_count == 0:
        raise CampaignComplete("no labels")
    lacking = ~mat[:, reduction.representative_array]
    eligible = np.flatnonzero(lacking.any(axis=0))
    if eligible.size == 0:
        raise CampaignComplete("every label is covered by every seed")
    k = min(config.neurons_per_iter, eligible.size)
    neurons = rng.choice(eligible, size=k, replace=False)
    pairs = []
    for neuron in neurons.tolist():
        cands = np.flatnonzero(lacking[:, neuron])
        spn = config.seeds_per_neuron
        picks = rng.choice(cands, size=spn, replace=cands.size < spn)
        pairs.extend((neuron, int(s)) for s in picks)
    return pairs


class Campaign:
    """Single owner of the corpus, global coverage and execution count."""

    def __init__(self, target: TargetProgram, config: CampaignConfig, initial_seeds=()):
        self.target = target
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        self.corpus = Corpus()
        self.stats = CampaignStats()
        self.executions = 0
        self.iteration = 0
        self.model = None
        self.reduction = None
        self.complete = False
        self._solved = set()
        self.initial_seeds = [pad_input(s, config.m) for s in initial_seeds]
        workers = config.workers or os.cpu_count() or 1
        self._pool = ThreadPoolExecutor(workers) if (workers > 1 and not target.synthetic) else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    # -- execution --------------------------------------------------------

    def _execute_many(self, inputs):
        if self._pool is None:
            return [execute(self.target, i) for i in inputs]
        return list(self._pool.map(lambda i: execute(self.target, i), inputs))

    def _admit(self, rec, origin, acc=None) -> bool:
        self.executions += 1
        crashes = len(self.corpus.crashes)
        new = self.corpus.offer(rec, origin, self.executions)
        if new or len(self.corpus.crashes) != crashes:
            self.stats.record(self.executions, self.corpus, self.iteration, acc)
        return new

    # -- baseline ---------------------------------------------------------

    def bootstrap(self) -> Corpus:
        budget = self.config.bootstrap_budget
        if budget < 1:
            raise ValueError("bootstrap budget must be >= 1")
        seeds = self.initial_seeds or [pad_input(b"", self.config.m)]
        for rec in self._execute_many(seeds[:budget]):
            origin = "bootstrap" if not self.corpus.seeds else "retained"
            self.executions += 1
            self.corpus.offer(rec, origin, self.executions)
            # the initial input is always kept
            if not self.corpus.seeds:
                self.corpus.seeds.append(Seed(rec.input, rec.bitmap, "bootstrap", self.executions))
        self.stats.record(self.executions, self.corpus, 0)
        while self.executions < budget:
            self.baseline_step()
        self.stats.record(self.executions, self.corpus, 0)
        return self.corpus

    def baseline_mutate(self, parent: ByteInput) -> ByteInput:
        m = len(parent)
        n = int(self.rng.integers(1, MAX_SUBSTITUTIONS + 1))
        pos = self.rng.integers(0, m, size=n)
        vals = self.rng.integers(0, 256, size=n, dtype=np.uint8)
        pos = pos.tolist()
        buf = bytearray(parent.data)
        for p, v in zip(pos, vals.tolist()):
            buf[p] = v
        return ByteInput(bytes(buf), max(parent.logical_len, max(pos) + 1))

    def baseline_step(self) -> ExecutionRecord:
        if not len(self.corpus):
            raise ValueError("corpus is empty")
        parent = self.corpus.seeds[int(self.rng.integers(len(self.corpus)))].input
        rec = execute(self.target, self.baseline_mutate(parent))
        self._admit(rec, "bootstrap" if self.iteration == 0 else "retained")
        return rec

    def baseline_iteration(self):
        self.iteration += 1
        stop = self.executions + self.config.mutation_budget
        while self.executions < stop:
            self.baseline_step()
        self.stats.record(self.executions, self.corpus, self.iteration)

    # -- gradient ---------------------------------------------------------

    def fit_surrogate(self):
        cfg = self.config
        data, reduction = incremental_retrain_filter(self.corpus, self.rng)
        if reduction.label_count == 0:
            raise CampaignComplete("no covered edges to learn")
        model = init_model(cfg.m, reduction.label_count, cfg.hidden_dim,
                           seed=int(self.rng.integers(2**31)), activation=cfg.activation)
        model, trace = train(model, data, cfg.epochs, cfg.batch_size, cfg.learning_rate)
        acc = evaluate(model, data)["bitwise_accuracy"] if len(data.test_idx) else None
        return model, reduction, data, trace, acc

    def fuzz_iteration(self, budget: int | None = None) -> bool:
        """One retrain / select / mutate / execute round.

        Spends at most ``budget`` executions (default ``mutation_budget``).
        Returns False (and leaves the corpus untouched) once no label is
        left to flip. Training failures propagate before any execution.
        """
        cfg = self.config
        try:
            model, reduction, data, trace, acc = self.fit_surrogate()
            pairs = select_targets(self.corpus, reduction, cfg, self.rng, model)
        except CampaignComplete as exc:
            log.info("campaign complete: %s", exc)
            self.complete = True
            return False
        self.model, self.reduction = model, reduction
        self.iteration += 1
        self.stats.accuracy.append(acc)
        log.info("iteration %d: %d samples, %d labels, loss %.4f -> %.4f, acc %s",
                 self.iteration, len(data), reduction.label_count, trace[0], trace[-1], acc)
        remaining = cfg.mutation_budget if budget is None else min(budget, cfg.mutation_budget)
        sched = cfg.schedule
        # snapshot: seeds admitted during this round are not parents yet
        parents = [s.input for s in self.corpus.seeds]
        for neuron, seed_idx in pairs:
            if remaining <= 0:
                break
            seed = parents[seed_idx]
            g = input_gradient(model, seed, neuron)
            remaining -= self._magic_step(seed, g, remaining, acc)
            batch = generate_mutations(seed, g, sched)
            children = list(batch.inputs(skip_duplicates=True))[:max(remaining, 0)]
            for rec in self._execute_many(children):
                self._admit(rec, "gradient", acc)
            remaining -= len(children)
        self.stats.record(self.executions, self.corpus, self.iteration, acc)
        return True

    def _magic_step(self, seed: ByteInput, g, remaining: int, acc) -> int:
        """Locally exhaustive search from the top-|g| bytes of ``seed``.

        Each (seed, anchor) pair is searched at most once per campaign.
        Returns the number of executions spent.
        """
        cfg = self.config
        width = min(cfg.magic_width, cfg.m)
        if not width or not cfg.magic_anchors:
            return 0
        spent = 0
        for loc in top_k(g, cfg.magic_anchors):
            anchor = min(loc, cfg.m - width)
            key = (seed.data, anchor)
            if key in self._solved:
                continue
            if remaining - spent < width * 256:
                break
            self._solved.add(key)
            res = magic_solver(self.target, seed, anchor, width)
            for rec in res.records:
                self._admit(rec, "gradient", acc)
            spent += res.executions
        return spent

    # -- driver -----------------------------------------------------------

    def run(self) -> CampaignStats:
        """Bootstrap, then spend ``iterations * mutation_budget`` executions.

        The gradient engine retrains whenever its selected pairs run out, so
        both engines consume the same total budget; a round may therefore
        end before ``mutation_budget`` and further rounds follow.
        """
        cfg = self.config
        self.bootstrap()
        if cfg.engine == "baseline":
            for _ in range(cfg.iterations):
                self.baseline_iteration()
        else:
            stop = self.executions + cfg.iterations * cfg.mutation_budget
            while self.executions < stop:
                before = self.executions
                if not self.fuzz_iteration(stop - self.executions) or self.executions == before:
                    break
        self.close()
        return self.stats


def run_campaign(target: TargetProgram, config: CampaignConfig, initial_seeds=()) -> Campaign:
    camp = Campaign(target, config, initial_seeds)
    camp.run()
    return camp


# -- persistence ------------------------------------------------------------

def save_corpus(corpus: Corpus, path, target: str = "", m: int | None = None,
                crashes: bool = False):
    """Write one raw file per seed plus ``manifest.json`` into ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    items = corpus.crashes if crashes else corpus.seeds
    entries = []
    for i, s in enumerate(items):
        name = f"id_{i:06d}"
        (path / name).write_bytes(s.input.raw)
        entries.append({"id": i, "file": name, "origin": s.origin,
                        "admitted_at": s.admitted_at, "logical_len": s.input.logical_len,
                        "edges": s.bitmap.edges()})
    edge_count = items[0].bitmap.edge_count if items else (
        corpus.global_coverage.edge_count if corpus.global_coverage is not None else 0)
    manifest = {"version": 1, "target": target, "m": m if m is not None else
                (len(items[0].input) if items else 0), "edge_count": edge_count,
                "seeds": entries}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_corpus(path, m: int | None = None) -> tuple[Corpus, dict]:
    path = Path(path)
    manifest = json.loads((path / "manifest.json").read_text())
    m = m or manifest["m"]
    corpus = Corpus()
    for e in manifest["seeds"]:
        raw = (path / e["file"]).read_bytes()
        bm = EdgeBitmap.from_edges(e["edges"], manifest["edge_count"])
        seed = Seed(pad_input(raw, m), bm, e["origin"], e["admitted_at"])
        corpus.seeds.append(seed)
        corpus.global_coverage = bm if corpus.global_coverage is None else corpus.global_coverage.union(bm)
    return corpus, manifest
