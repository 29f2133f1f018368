"""Programs under test.

Synthetic targets are pure Python functions of the input bytes with a small,
explicit edge id space. :class:`ExternalTarget` runs a real executable that
writes its bitmap file to the path in ``COVERAGE_OUT``.
"""

from __future__ import annotations

import itertools
import os
import subprocess
import tempfile
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable

from .coverage import ByteInput, EdgeBitmap, EdgeCountMismatch

OK = "ok"
CRASH = "crash"
TIMEOUT = "timeout"


class TargetError(RuntimeError):
    """The target could not be run or broke the bitmap protocol."""


@dataclass(frozen=True)
class ExecutionRecord:
    input: ByteInput
    bitmap: EdgeBitmap
    wall_time: float
    verdict: str = OK


class TargetProgram:
    name: str
    edge_count: int
    synthetic = True

    def run(self, data: bytes) -> tuple[list[int], str]:
        """Return covered edge ids and a verdict for one input."""
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, edge_count={self.edge_count})"


class SyntheticTarget(TargetProgram):
    def __init__(self, name: str, edge_count: int, fn: Callable[[bytes], tuple]):
        self.name = name
        self.edge_count = edge_count
        self._fn = fn

    def run(self, data: bytes):
        return self._fn(data)


def _byte(data: bytes, i: int) -> int:
    return data[i] if i < len(data) else 0


# --- expcheck ---------------------------------------------------------------
#   z = pow(3, a+b); if z < 1 ... elif z < 2 (bug) ... elif z < 4 ...
# a and b are the high nibbles of bytes 0 and 1 in excess-8 form, so both
# range over [-8, 7] and byte value order matches numeric order.

EXP_ENTRY, EXP_LT1, EXP_LT2, EXP_LT4 = range(4)


def decode_ab(data: bytes) -> tuple[int, int]:
    return (_byte(data, 0) >> 4) - 8, (_byte(data, 1) >> 4) - 8


def _expcheck(data: bytes):
    a, b = decode_ab(data)
    z = Fraction(3) ** (a + b)
    edges = [EXP_ENTRY]
    if z < 1:
        edges.append(EXP_LT1)
    elif z < 2:
        edges.append(EXP_LT2)
    elif z < 4:
        edges.append(EXP_LT4)
    return edges, OK


# --- magic4 -----------------------------------------------------------------
# Nested per-byte comparisons against b"MAGI". After the guard, the body
# (bytes 4..) is scanned and every nonzero byte hits a value-bucket edge that
# is distinct per guard depth, so passing more of the guard opens new code.

MAGIC = b"MAGI"
MAGIC_BUCKETS = 16
MAGIC_ENTRY = 0
MAGIC_BUG = 1 + len(MAGIC)
MAGIC_BODY_BASE = MAGIC_BUG + 1
MAGIC_EDGES = MAGIC_BODY_BASE + (len(MAGIC) + 1) * MAGIC_BUCKETS


def magic_compare_edge(j: int) -> int:
    return 1 + j


def _magic4(data: bytes):
    edges = [MAGIC_ENTRY]
    depth = 0
    for j, c in enumerate(MAGIC):
        if _byte(data, j) != c:
            break
        edges.append(magic_compare_edge(j))
        depth = j + 1
    verdict = OK
    if depth == len(MAGIC):
        edges.append(MAGIC_BUG)
        verdict = CRASH
    base = MAGIC_BODY_BASE + depth * MAGIC_BUCKETS
    body = set(data[len(MAGIC):].translate(None, b"\x00"))
    edges.extend(sorted({base + (v >> 4) for v in body}))
    return edges, verdict


# --- header-parser ----------------------------------------------------------
# 4-byte signature, a section-count byte and up to 8 [type][len][payload]
# records. A zero section count crashes (null section table dereference).

HDR_SIGNATURE = b"\x7fHDR"
HDR_MAX_SECTIONS = 8
HDR_MAX_PAYLOAD = 32
HDR_ENTRY = 0
HDR_NULL_TABLE = 1 + len(HDR_SIGNATURE)
HDR_CLAMPED = HDR_NULL_TABLE + 1
HDR_RECORD_BASE = HDR_CLAMPED + 1
# per record: end marker, types 1..4, unknown type, overlong payload
HDR_RECORD_EDGES = 7
HDR_EDGES = HDR_RECORD_BASE + HDR_MAX_SECTIONS * HDR_RECORD_EDGES


def _header_parser(data: bytes):
    edges = [HDR_ENTRY]
    for j, c in enumerate(HDR_SIGNATURE):
        if _byte(data, j) != c:
            return edges, OK
        edges.append(1 + j)
    pos = len(HDR_SIGNATURE)
    count = _byte(data, pos)
    if count == 0:
        edges.append(HDR_NULL_TABLE)
        return edges, CRASH
    if count > HDR_MAX_SECTIONS:
        edges.append(HDR_CLAMPED)
        count = HDR_MAX_SECTIONS
    pos += 1
    for r in range(count):
        base = HDR_RECORD_BASE + r * HDR_RECORD_EDGES
        rtype, length = _byte(data, pos), _byte(data, pos + 1)
        if rtype == 0:
            edges.append(base)
            break
        edges.append(base + rtype if rtype <= 4 else base + 5)
        if length > HDR_MAX_PAYLOAD:
            edges.append(base + 6)
            length = HDR_MAX_PAYLOAD
        pos += 2 + length
    return edges, OK


# --- extremum ---------------------------------------------------------------
# Big-endian u32 size field at bytes 0..3. Sizes above the cap take an
# allocation path that validates eight sampling-factor bytes; the all-ones
# size runs out of memory.

EXT_ENTRY = 0
EXT_ZERO = 1
EXT_BUCKET_BASE = 2
EXT_CAP = 0xFFFEFFFF
EXT_ALLOC = EXT_BUCKET_BASE + 32
EXT_FACTORS = 8
EXT_FACTOR_BASE = EXT_ALLOC + 1
EXT_OOM = EXT_FACTOR_BASE + EXT_FACTORS
EXT_EDGES = EXT_OOM + 1


def _extremum(data: bytes):
    size = int.from_bytes(bytes(_byte(data, i) for i in range(4)), "big")
    edges = [EXT_ENTRY]
    if size == 0:
        edges.append(EXT_ZERO)
        return edges, OK
    edges.append(EXT_BUCKET_BASE + size.bit_length() - 1)
    if size <= EXT_CAP:
        return edges, OK
    edges.append(EXT_ALLOC)
    for j in range(EXT_FACTORS):
        if _byte(data, 4 + j) > 4:
            edges.append(EXT_FACTOR_BASE + j)
    if size == 0xFFFFFFFF:
        edges.append(EXT_OOM)
        return edges, CRASH
    return edges, OK


def _trivial(data: bytes):
    return [0], OK


SYNTHETIC_TARGETS = {
    "expcheck": (4, _expcheck),
    "magic4": (MAGIC_EDGES, _magic4),
    "header-parser": (HDR_EDGES, _header_parser),
    "extremum": (EXT_EDGES, _extremum),
    "trivial": (1, _trivial),
}

SUITE = ("expcheck", "magic4", "header-parser", "extremum")


def get_target(name: str) -> TargetProgram:
    try:
        edge_count, fn = SYNTHETIC_TARGETS[name]
    except KeyError:
        raise KeyError(
            f"unknown target {name!r}; choose from {sorted(SYNTHETIC_TARGETS)}"
        ) from None
    return SyntheticTarget(name, edge_count, fn)


class ExternalTarget(TargetProgram):
    """A program that takes the input file path as its only argument and
    writes a bitmap file to ``$COVERAGE_OUT``."""

    synthetic = False

    def __init__(self, command, edge_count: int = 65536, timeout: float = 1.0,
                 name: str | None = None):
        self.command = [str(c) for c in ([command] if isinstance(command, (str, os.PathLike)) else command)]
        self.edge_count = edge_count
        self.timeout = timeout
        self.name = name or Path(self.command[0]).name
        if not Path(self.command[0]).exists():
            raise TargetError(f"target executable not found: {self.command[0]}")

    def run(self, data: bytes):
        with tempfile.TemporaryDirectory(prefix="smoothfuzz-") as tmp:
            inp = Path(tmp, "input")
            out = Path(tmp, "bitmap")
            inp.write_bytes(data)
            env = dict(os.environ, COVERAGE_OUT=str(out))
            try:
                proc = subprocess.run(
                    self.command + [str(inp)],
                    env=env,
                    stdin=subprocess.DEVNULL,
                    stdout=subprocess.DEVNULL,
                    stderr=subprocess.DEVNULL,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                return [], TIMEOUT
            except OSError as exc:
                raise TargetError(f"cannot run {self.command[0]}: {exc}") from exc
            # killed by a signal: returncode is negative on POSIX
            verdict = CRASH if proc.returncode < 0 else OK
            if not out.exists():
                if verdict == CRASH:
                    return [], CRASH
                raise TargetError(f"{self.name} did not write {out.name} (exit {proc.returncode})")
            buf = out.read_bytes()
        try:
            bm = EdgeBitmap.from_bytes(buf, self.edge_count)
        except EdgeCountMismatch as exc:
            raise TargetError(str(exc)) from exc
        return bm.edges(), verdict


def execute(target: TargetProgram, inp: ByteInput) -> ExecutionRecord:
    """Run ``target`` on one padded input."""
    start = time.perf_counter()
    data = inp.data if target.synthetic else inp.raw
    edges, verdict = target.run(data)
    elapsed = time.perf_counter() - start
    if verdict == TIMEOUT:
        bitmap = EdgeBitmap.empty(target.edge_count)
    else:
        bitmap = EdgeBitmap.from_edges(edges, target.edge_count)
    return ExecutionRecord(inp, bitmap, elapsed, verdict)


def enumerate_reachable_edges(target: TargetProgram, max_len: int,
                              positions=None, pad_to: int = 0) -> EdgeBitmap:
    """Union of bitmaps over every input of length ``max_len``.

    ``positions`` restricts which byte indices vary (others stay 0), which
    keeps structured sweeps cheap; at most three positions may vary.
    """
    if not target.synthetic:
        raise NotImplementedError("reachability enumeration needs a synthetic target")
    positions = list(range(max_len)) if positions is None else list(positions)
    if len(positions) > 3:
        raise ValueError("enumeration over more than 3 bytes is too large")
    length = max([max_len, pad_to] + [p + 1 for p in positions])
    union = set()
    buf = bytearray(length)
    for values in itertools.product(range(256), repeat=len(positions)):
        for p, v in zip(positions, values):
            buf[p] = v
        edges, _ = target.run(bytes(buf))
        union.update(edges)
    return EdgeBitmap.from_edges(sorted(union), target.edge_count)
