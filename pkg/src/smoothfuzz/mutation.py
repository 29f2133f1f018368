"""Gradient-guided mutation and the local exhaustive magic-byte solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coverage import ByteInput
from .targets import TargetProgram, execute


@dataclass(frozen=True)
class MutationSchedule:
    iterations: int = 10
    growth_base: int = 2
    magnitude_steps: int = 256

    def __post_init__(self):
        if min(self.iterations, self.growth_base, self.magnitude_steps) < 1:
            raise ValueError("schedule parameters must be >= 1")

    def sizes(self, m: int) -> list[int]:
        """Locations selected per iteration: ``growth_base ** i`` capped at m."""
        return [min(self.growth_base ** i, m) for i in range(1, self.iterations + 1)]

    @property
    def batch_size(self) -> int:
        return self.iterations * 2 * self.magnitude_steps


@dataclass
class MutationBatch:
    parent: ByteInput
    children: np.ndarray  # (n_children, m) uint8
    provenance: np.ndarray  # (n_children, 3): iteration, magnitude, direction
    duplicate: np.ndarray  # bool, equals the parent or an earlier child
    locations: list  # selected locations for each iteration

    def __len__(self):
        return len(self.children)

    def child(self, i: int) -> ByteInput:
        row = self.children[i]
        it = int(self.provenance[i, 0])
        hi = int(np.max(self.locations[it - 1])) + 1
        return ByteInput(row.tobytes(), max(self.parent.logical_len, hi))

    def inputs(self, skip_duplicates: bool = True):
        for i in range(len(self)):
            if not (skip_duplicates and self.duplicate[i]):
                yield self.child(i)


def top_k(g, k: int) -> list[int]:
    """Indices of the k largest |g|, descending; ties go to the lower index."""
    g = np.asarray(g, dtype=np.float64).ravel()
    if k < 1:
        raise ValueError("k must be >= 1")
    k = min(k, g.size)
    return np.argsort(-np.abs(g), kind="stable")[:k].tolist()


def gradient_sign(g) -> np.ndarray:
    """Sign with sign(0) = +1."""
    return np.where(np.asarray(g) < 0, -1, 1).astype(np.int16)


def generate_mutations(seed: ByteInput, g, sched: MutationSchedule = MutationSchedule()) -> MutationBatch:
    """Shift the top-|g| bytes jointly by ±s·sign(g), s = 1..magnitude_steps.

    Iteration i selects ``growth_base**i`` locations. Each (iteration, s)
    emits the "+" child then the "-" child, clipped to [0, 255].
    """
    base = seed.array.astype(np.int16)
    g = np.asarray(g, dtype=np.float64).ravel()
    m = base.size
    if g.size != m:
        raise ValueError(f"gradient length {g.size} != input length {m}")
    steps = np.arange(1, sched.magnitude_steps + 1, dtype=np.int16)
    children = np.empty((sched.batch_size, m), dtype=np.uint8)
    prov = np.empty((sched.batch_size, 3), dtype=np.int16)
    all_locs = []
    row = 0
    for it, k in enumerate(sched.sizes(m), start=1):
        locs = np.asarray(top_k(g, k))
        all_locs.append(locs)
        sign = gradient_sign(g[locs])
        plus = np.clip(base[locs] + steps[:, None] * sign, 0, 255)
        minus = np.clip(base[locs] - steps[:, None] * sign, 0, 255)
        n = 2 * len(steps)
        block = np.broadcast_to(seed.array, (n, m)).copy()
        block[0::2, locs] = plus
        block[1::2, locs] = minus
        children[row:row + n] = block
        prov[row:row + n, 0] = it
        prov[row:row + n, 1] = np.repeat(steps, 2)
        prov[row:row + n, 2] = np.tile([1, -1], len(steps))
        row += n
    seen = {seed.data}
    dup = np.zeros(len(children), dtype=bool)
    for i, ch in enumerate(children):
        key = ch.tobytes()
        if key in seen:
            dup[i] = True
        else:
            seen.add(key)
    return MutationBatch(seed, children, prov, dup, all_locs)


@dataclass
class SolveResult:
    solved: ByteInput | None
    best: ByteInput
    executions: int
    records: list

    @property
    def success(self) -> bool:
        return self.solved is not None


def magic_solver(target: TargetProgram, seed: ByteInput, anchor: int, width: int = 4,
                 goal_edge: int | None = None) -> SolveResult:
    """Greedy byte-by-byte exhaustive search starting at ``anchor``.

    For each of ``width`` bytes all 256 values are tried and the value with
    the highest covered-edge count is kept if it beats the current count.
    Succeeds once ``goal_edge`` is covered, or, without a goal, if the final
    count exceeds the seed's. Never runs more than ``width * 256`` executions.
    """
    if anchor < 0 or width < 1 or anchor + width > len(seed):
        raise ValueError(f"anchor {anchor} + width {width} exceeds input length {len(seed)}")
    current = bytearray(seed.data)
    logical = max(seed.logical_len, anchor + width)
    executions = 0
    records = []
    start_count = None
    best_count = None
    for pos in range(anchor, anchor + width):
        keep, keep_count = current[pos], None
        for value in range(256):
            current[pos] = value
            rec = execute(target, ByteInput(bytes(current), logical))
            executions += 1
            records.append(rec)
            n = rec.bitmap.count()
            if value == keep:
                base_count = n
            if keep_count is None or n > keep_count:
                keep_count, best_value = n, value
            if goal_edge is not None and goal_edge in rec.bitmap:
                done = ByteInput(bytes(current), logical)
                return SolveResult(done, done, executions, records)
        if start_count is None:
            start_count = base_count
            best_count = base_count
        if keep_count > best_count:
            current[pos] = best_value
            best_count = keep_count
        else:
            current[pos] = keep
    best = ByteInput(bytes(current), logical)
    ok = goal_edge is None and best_count > start_count
    return SolveResult(best if ok else None, best, executions, records)
