import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothfuzz.coverage import (ByteInput, EdgeBitmap, EdgeCountMismatch,
                                 OversizeInputError, build_reduction, has_new_coverage,
                                 pad_input, read_bitmap, reduce, write_bitmap)
from smoothfuzz.estimators import EdgeMerger


def bm(edges, n=16):
    return EdgeBitmap.from_edges(edges, n)


def brute_partition(mat):
    """Group ever-covered columns by exact column equality, pairwise."""
    n_edges = mat.shape[1]
    live = [e for e in range(n_edges) if any(mat[:, e])]
    groups = []
    for e in live:
        for g in groups:
            if all(mat[i, e] == mat[i, g[0]] for i in range(mat.shape[0])):
                g.append(e)
                break
        else:
            groups.append([e])
    return sorted(map(tuple, groups))


class TestPadInput:
    def test_pads_with_nulls(self):
        p = pad_input(b"AB", 4)
        assert p.data == b"AB\x00\x00"
        assert p.logical_len == 2

    def test_empty(self):
        p = pad_input(b"", 3)
        assert p.data == bytes(3) and p.logical_len == 0

    def test_exact_fit_threshold(self):
        raw = bytes([7]) * 10240
        p = pad_input(raw, 10240)
        assert p.data == raw and p.logical_len == 10240

    def test_oversize_rejected(self):
        with pytest.raises(OversizeInputError):
            pad_input(b"abcde", 4)

    @given(st.binary(max_size=40), st.integers(40, 64))
    def test_idempotent(self, raw, m):
        once = pad_input(raw, m)
        assert pad_input(once.raw, m) == once
        assert pad_input(once, m) == once
        assert len(once) == m
        assert once.data[once.logical_len:] == bytes(m - once.logical_len)


class TestBitmap:
    def test_file_roundtrip(self, tmp_path):
        b = bm([0, 3, 15])
        path = tmp_path / "cov"
        write_bitmap(path, b)
        raw = path.read_bytes()
        assert len(raw) == 16
        assert [i for i, v in enumerate(raw) if v] == [0, 3, 15]
        assert read_bitmap(path, 16) == b

    def test_any_nonzero_byte_counts(self):
        assert EdgeBitmap.from_bytes(bytes([0, 9, 0, 255])).edges() == [1, 3]

    def test_file_length_checked(self):
        with pytest.raises(EdgeCountMismatch):
            EdgeBitmap.from_bytes(bytes(10), 16)

    def test_union_idempotent(self):
        b = bm([1, 2, 3])
        assert b.union(b) == b

    def test_immutable(self):
        b = bm([1])
        with pytest.raises(ValueError):
            b.covered[0] = True


class TestBuildReduction:
    def test_single_bitmap_merges_everything(self):
        r = build_reduction([bm([3, 7])])
        assert r.label_count == 1
        assert r.raw_to_label == {3: 0, 7: 0}
        assert r.representative == (3,)

    def test_two_bitmaps_split(self):
        r = build_reduction([bm([1, 2]), bm([1])])
        assert r.label_count == 2
        assert r.raw_to_label[1] != r.raw_to_label[2]

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError):
            build_reduction([])

    def test_nothing_covered(self):
        r = build_reduction([bm([]), bm([])])
        assert r.label_count == 0 and r.raw_to_label == {}

    def test_mismatched_edge_counts(self):
        with pytest.raises(EdgeCountMismatch):
            build_reduction([bm([1], 8), bm([1], 16)])

    def test_4000_distinct_columns_over_65536_edges(self):
        rng = np.random.default_rng(4000)
        n_samples, n_edges, n_templates = 200, 65536, 4000
        templates = set()
        while len(templates) < n_templates:
            col = rng.random(n_samples) < rng.uniform(0.05, 0.95)
            if col.any():
                templates.add(np.packbits(col).tobytes())
        templates = np.array([np.unpackbits(np.frombuffer(t, np.uint8))[:n_samples]
                              for t in sorted(templates)], dtype=bool)
        # every template used at least once; a tail of edges never covered
        live = 60000
        assign = np.concatenate([np.arange(n_templates),
                                 rng.integers(0, n_templates, live - n_templates)])
        mat = np.zeros((n_samples, n_edges), dtype=bool)
        mat[:, :live] = templates[assign].T
        r = build_reduction(mat)
        assert r.label_count == 4000
        assert len(r.raw_to_label) == live

    def test_labels_dense_and_ordered_by_representative(self):
        r = build_reduction([bm([5, 2, 9]), bm([9]), bm([2, 5])])
        assert sorted(set(r.raw_to_label.values())) == list(range(r.label_count))
        assert list(r.representative) == sorted(r.representative)
        for lab, rep in enumerate(r.representative):
            assert rep == min(e for e, l in r.raw_to_label.items() if l == lab)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 64).flatmap(
        lambda e: st.lists(st.lists(st.booleans(), min_size=e, max_size=e),
                           min_size=1, max_size=32)))
    def test_matches_brute_force(self, rows):
        mat = np.array(rows, dtype=bool)
        r = build_reduction(mat)
        got = sorted(r.groups)
        assert got == brute_partition(mat)

    def test_order_independent(self):
        rng = np.random.default_rng(3)
        mat = rng.random((12, 40)) < 0.3
        a = build_reduction(mat)
        b = build_reduction(mat[rng.permutation(12)])
        assert a == b


class TestReduce:
    def test_merged_pair(self):
        r = build_reduction([bm([3, 7])])
        assert reduce(bm([3, 7]), r).tolist() == [1]

    def test_empty_bitmap(self):
        r = build_reduction([bm([3, 7]), bm([3])])
        assert reduce(bm([]), r).tolist() == [0, 0]

    def test_dropped_edge_only(self):
        r = build_reduction([bm([1, 2]), bm([2])])
        assert reduce(bm([9]), r).tolist() == [0] * r.label_count

    def test_edge_count_mismatch(self):
        r = build_reduction([bm([1])])
        with pytest.raises(EdgeCountMismatch):
            reduce(bm([1], 32), r)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.booleans(), min_size=20, max_size=20), min_size=1, max_size=16))
    def test_information_preserving(self, rows):
        mat = np.array(rows, dtype=bool)
        r = build_reduction(mat)
        live = mat.any(axis=0)
        labels = [reduce(EdgeBitmap(row), r) for row in mat]
        for i, j in itertools.combinations(range(len(mat)), 2):
            same_labels = np.array_equal(labels[i], labels[j])
            same_live = np.array_equal(mat[i, live], mat[j, live])
            assert same_labels == same_live
        assert all(len(lab) == r.label_count for lab in labels)


class TestHasNewCoverage:
    def test_new_edge(self):
        new, g = has_new_coverage(bm([1]), bm([]))
        assert new and g == bm([1])

    def test_nothing_new(self):
        g0 = bm([1, 2])
        new, g = has_new_coverage(bm([1]), g0)
        assert not new and g == g0

    def test_sequence(self):
        g = bm([])
        flags = []
        for b in (bm([1]), bm([2]), bm([1, 2])):
            new, g = has_new_coverage(b, g)
            flags.append(new)
        assert flags == [True, True, False]

    def test_mismatch(self):
        with pytest.raises(EdgeCountMismatch):
            has_new_coverage(bm([1], 8), bm([], 16))

    @given(st.lists(st.sets(st.integers(0, 15)), max_size=8), st.randoms())
    def test_permutation_invariant_union(self, sets, rnd):
        def fold(seq):
            g = bm([])
            for s in seq:
                _, g = has_new_coverage(bm(s), g)
            return g
        shuffled = list(sets)
        rnd.shuffle(shuffled)
        assert fold(sets) == fold(shuffled) == bm(set().union(*sets))


def test_edge_merger_estimator():
    X = np.array([[1, 1, 0, 1], [1, 0, 0, 1]])
    merger = EdgeMerger().fit(X)
    assert merger.label_count_ == 2
    assert merger.transform(X).tolist() == [[1, 1], [1, 0]]
    assert merger.get_params() == {}
    assert np.array_equal(EdgeMerger().fit_transform(X), merger.transform(X))


def test_byte_input_bounds():
    with pytest.raises(ValueError):
        ByteInput(b"ab", 3)
