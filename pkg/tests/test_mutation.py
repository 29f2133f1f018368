import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smoothfuzz.coverage import ByteInput, pad_input
from smoothfuzz.mutation import MutationSchedule, generate_mutations, magic_solver, top_k
from smoothfuzz.targets import MAGIC_BUG, get_target


def literal_mutations(seed: bytes, g, iterations, k, steps):
    """Loop-by-loop transcription: one child per (iteration, magnitude, direction)."""
    m = len(seed)
    out = []
    for i in range(1, iterations + 1):
        order = sorted(range(m), key=lambda j: (-abs(g[j]), j))
        locs = order[:min(k ** i, m)]
        for s in range(1, steps + 1):
            for direction in (1, -1):
                child = list(seed)
                for loc in locs:
                    sign = -1 if g[loc] < 0 else 1
                    child[loc] = min(255, max(0, seed[loc] + direction * s * sign))
                out.append(bytes(child))
    return out


gradients = st.integers(2, 24).flatmap(
    lambda m: st.tuples(
        st.binary(min_size=m, max_size=m),
        st.lists(st.floats(-10, 10, allow_nan=False), min_size=m, max_size=m)))


class TestTopK:
    def test_by_magnitude(self):
        assert top_k([0.1, -0.9, 0.5], 2) == [1, 2]

    def test_ties_by_index(self):
        assert top_k([0.0] * 5, 3) == [0, 1, 2]

    def test_capped(self):
        assert top_k([1.0, 2.0], 10) == [1, 0]

    @given(arrays(np.float64, 64, elements=st.floats(-1e3, 1e3)), st.integers(1, 64))
    def test_matches_full_sort(self, g, k):
        oracle = sorted(range(64), key=lambda j: (-abs(g[j]), j))[:k]
        assert top_k(g, k) == oracle

    @given(arrays(np.float64, 32, elements=st.floats(-1e3, 1e3)), st.integers(1, 32),
           st.integers(-8, 8))
    def test_scale_invariant(self, g, k, exp2):
        assert top_k(g, k) == top_k(g * 2.0 ** exp2, k)


class TestSchedule:
    def test_defaults(self):
        s = MutationSchedule()
        assert (s.iterations, s.growth_base, s.magnitude_steps) == (10, 2, 256)
        assert s.sizes(10240) == [2 ** i for i in range(1, 11)]

    def test_sizes_capped_at_m(self):
        assert MutationSchedule(10, 2, 1).sizes(100) == [2, 4, 8, 16, 32, 64, 100, 100, 100, 100]


class TestGenerate:
    def test_default_batch_is_5120(self):
        seed = pad_input(b"hello", 10240)
        g = np.random.default_rng(0).normal(size=10240)
        assert len(generate_mutations(seed, g)) == 5120

    def test_hand_executed_example(self):
        batch = generate_mutations(ByteInput(bytes(2), 2), [1.0, 1.0], MutationSchedule(1, 1, 2))
        assert [bytes(c) for c in batch.children] == [b"\x01\x00", b"\x00\x00", b"\x02\x00", b"\x00\x00"]
        assert batch.duplicate.tolist() == [False, True, False, True]
        assert batch.provenance.tolist() == [[1, 1, 1], [1, 1, -1], [1, 2, 1], [1, 2, -1]]
        assert [c.data for c in batch.inputs()] == [b"\x01\x00", b"\x02\x00"]

    def test_clip_ceiling(self):
        batch = generate_mutations(ByteInput(b"\xff", 1), [1.0], MutationSchedule(1, 1, 7))
        assert all(bytes(c) == b"\xff" for c in batch.children[0::2])

    def test_zero_gradient_moves_up(self):
        batch = generate_mutations(ByteInput(b"\x10\x10", 2), [0.0, 0.0], MutationSchedule(1, 2, 3))
        assert bytes(batch.children[0]) == b"\x11\x11"
        assert bytes(batch.children[1]) == b"\x0f\x0f"

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            generate_mutations(ByteInput(bytes(3), 3), [1.0, 2.0])

    def test_child_logical_len_covers_mutation(self):
        batch = generate_mutations(pad_input(b"ab", 8), [0, 0, 0, 0, 0, 0, 0, 5.0],
                                   MutationSchedule(1, 1, 1))
        assert batch.child(0).logical_len == 8

    @settings(max_examples=60, deadline=None)
    @given(gradients, st.integers(1, 4), st.integers(1, 3), st.integers(1, 12))
    def test_matches_literal_loops(self, sg, iterations, k, steps):
        seed, g = sg
        batch = generate_mutations(ByteInput(seed, len(seed)), g, MutationSchedule(iterations, k, steps))
        assert [bytes(c) for c in batch.children] == literal_mutations(seed, g, iterations, k, steps)

    @settings(max_examples=60, deadline=None)
    @given(gradients, st.integers(1, 4), st.integers(1, 3), st.integers(1, 12))
    def test_batch_laws(self, sg, iterations, k, steps):
        seed, g = sg
        g = np.asarray(g)
        sched = MutationSchedule(iterations, k, steps)
        batch = generate_mutations(ByteInput(seed, len(seed)), g, sched)
        parent = np.frombuffer(seed, np.uint8).astype(int)
        assert len(batch) == iterations * 2 * steps
        for row, (it, s, d) in zip(batch.children.astype(int), batch.provenance):
            locs = batch.locations[it - 1]
            mask = np.zeros(len(seed), bool)
            mask[locs] = True
            assert np.array_equal(row[~mask], parent[~mask])
            sign = np.where(g[locs] < 0, -1, 1)
            assert np.all(d * sign * (row[locs] - parent[locs]) >= 0)
        again = generate_mutations(ByteInput(seed, len(seed)), g, sched)
        assert np.array_equal(batch.children, again.children)
        scaled = generate_mutations(ByteInput(seed, len(seed)), g * 4.0, sched)
        assert np.array_equal(batch.children, scaled.children)


class TestMagicSolver:
    def test_magic4_within_1024(self):
        res = magic_solver(get_target("magic4"), pad_input(b"", 16), 0, 4)
        assert res.success
        assert res.solved.data[:4] == b"MAGI"
        assert res.executions <= 1024

    def test_magic4_goal_edge_stops_early(self):
        res = magic_solver(get_target("magic4"), pad_input(b"MAG", 16), 0, 4, goal_edge=MAGIC_BUG)
        assert res.success and MAGIC_BUG in res.records[-1].bitmap
        assert res.executions == 3 * 256 + ord("I") + 1

    def test_single_byte_check(self):
        res = magic_solver(get_target("magic4"), pad_input(b"", 16), 0, 1)
        assert res.success and res.solved.data[0] == ord("M")
        assert res.executions <= 256

    def test_no_comparison_edges(self):
        res = magic_solver(get_target("trivial"), pad_input(b"", 16), 3, 4)
        assert not res.success
        assert res.executions == 4 * 256

    def test_bounds(self):
        with pytest.raises(ValueError):
            magic_solver(get_target("magic4"), pad_input(b"", 8), 6, 4)

    @settings(max_examples=20, deadline=None)
    @given(st.binary(min_size=8, max_size=8), st.integers(0, 4), st.integers(1, 4))
    def test_execution_bound(self, raw, anchor, width):
        res = magic_solver(get_target("header-parser"), pad_input(raw, 8), anchor, width)
        assert res.executions <= width * 256
