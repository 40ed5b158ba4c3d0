import math

import numpy as np
import pytest

from solokit.masks import BinaryMask, Instance, InstanceSet, iou
from solokit.nms import (DecayKind, fast_nms, hard_nms, matrix_nms, matrix_nms_decay, matrix_nms_oracle,
                         soft_nms)

from conftest import random_set

DECAYS = [DecayKind.linear(), DecayKind.gaussian(0.5), DecayKind.gaussian(0.3), DecayKind.gaussian(1.0)]


def cols(width, start, stop, h=1):
    m = np.zeros((h, width), bool)
    m[:, start:stop] = True
    return BinaryMask(m)


def make(masks, scores, classes=None, h=None, w=None):
    classes = classes or [0] * len(masks)
    h, w = masks[0].shape
    return InstanceSet(h, w, tuple(Instance(s, c, m) for m, s, c in zip(masks, scores, classes)))


def greedy_oracle(s, thr):
    """Independent greedy loop over Python lists."""
    order = sorted(range(len(s)), key=lambda k: (-s[k].score, k))
    kept = []
    for j in order:
        if all(s[i].class_id != s[j].class_id or iou(s[i].mask, s[j].mask) <= thr for i in kept):
            kept.append(j)
    return kept


def soft_oracle(s, f, floor):
    scores = {k: s[k].score for k in range(len(s))}
    out = []
    while scores:
        i = min(scores, key=lambda k: (-scores[k], k))
        out.append((i, scores.pop(i)))
        for j in list(scores):
            if s[j].class_id == s[i].class_id:
                scores[j] *= f(iou(s[i].mask, s[j].mask))
                if scores[j] < floor:
                    del scores[j]
    return out


def disjoint_set(n=5):
    return make([cols(4 * n, 4 * k, 4 * k + 3) for k in range(n)], [0.9 - 0.1 * k for k in range(n)])


class TestHard:
    def test_identical(self, backend):
        m = cols(8, 0, 4)
        out = hard_nms(make([m, m], [0.9, 0.8]), 0.5)
        assert [i.score for i in out] == [0.9]

    def test_disjoint(self, backend):
        assert len(hard_nms(disjoint_set(), 0.5)) == 5

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_greedy_oracle(self, backend, seed):
        rng = np.random.default_rng(seed)
        s = random_set(rng, 10, 16, 16, n_classes=2)
        out = hard_nms(s, 0.3)
        expect = greedy_oracle(s, 0.3)
        assert [(i.score, i.class_id) for i in out] == [(s[k].score, s[k].class_id) for k in expect]


class TestSoft:
    def test_single(self, backend):
        s = make([cols(8, 0, 4)], [0.7])
        assert soft_nms(s).scores.tolist() == [0.7]

    @pytest.mark.parametrize("decay", DECAYS)
    def test_disjoint_unchanged(self, backend, decay):
        s = disjoint_set()
        np.testing.assert_array_equal(soft_nms(s, decay).scores, s.scores)

    def test_three_overlapping_linear_hand(self, backend):
        # a = cols 0-9, b = cols 2-11, c = cols 5-14 on a 1 x 16 strip
        a, b, c = cols(16, 0, 10), cols(16, 2, 12), cols(16, 5, 15)
        s = make([a, b, c], [0.9, 0.8, 0.7])
        ab, ac, bc = 8 / 12, 5 / 15, 7 / 13
        sb = 0.8 * (1 - ab)
        sc = 0.7 * (1 - ac)
        # after popping a, c (0.4667) outranks b (0.2667)
        assert sc > sb
        sb2 = sb * (1 - bc)
        out = soft_nms(s, DecayKind.linear(), 0.001)
        np.testing.assert_allclose(out.scores, [0.9, sc, sb2], rtol=0, atol=1e-15)

    @pytest.mark.parametrize("seed", range(8))
    @pytest.mark.parametrize("decay", [DecayKind.linear(), DecayKind.gaussian(0.5)])
    def test_matches_step_oracle(self, backend, seed, decay):
        rng = np.random.default_rng(100 + seed)
        s = random_set(rng, 15, 16, 16, n_classes=2)
        out = soft_nms(s, decay, 0.05)
        expect = soft_oracle(s, decay, 0.05)
        assert len(out) == len(expect)
        np.testing.assert_allclose(out.scores, [v for _, v in expect], rtol=0, atol=1e-12)
        assert [i.mask for i in out] == [s[k].mask for k, _ in expect]


class TestFast:
    def test_identical(self, backend):
        m = cols(8, 0, 4)
        assert fast_nms(make([m, m], [0.8, 0.9]), 0.5).scores.tolist() == [0.9]

    def test_disjoint(self, backend):
        assert len(fast_nms(disjoint_set(), 0.5)) == 5

    def test_chain_over_suppression(self, backend):
        # A and C disjoint, B = A u C: IoU(A,B) = IoU(B,C) = 0.5, IoU(A,C) = 0
        a, c = cols(20, 0, 10), cols(20, 10, 20)
        b = BinaryMask(a.bits | c.bits)
        s = make([a, b, c], [0.9, 0.8, 0.7])
        assert iou(a, b) == 0.5 and iou(b, c) == 0.5 and iou(a, c) == 0.0
        assert fast_nms(s, 0.4).scores.tolist() == [0.9]
        assert hard_nms(s, 0.4).scores.tolist() == [0.9, 0.7]

    def test_thread_invariant(self, backend):
        s = random_set(np.random.default_rng(5), 60, 16, 16)
        base = fast_nms(s, 0.3, num_threads=1).scores
        np.testing.assert_array_equal(fast_nms(s, 0.3, num_threads=3).scores, base)


class TestMatrix:
    def test_single(self, backend):
        s = make([cols(8, 0, 4)], [0.42])
        assert matrix_nms(s).scores.tolist() == [0.42]

    @pytest.mark.parametrize("decay", DECAYS)
    def test_disjoint_unchanged(self, backend, decay):
        s = disjoint_set()
        np.testing.assert_array_equal(matrix_nms(s, decay).scores, s.scores)

    def two(self):
        a = cols(10, 0, 10)
        b = cols(10, 0, 6)
        assert iou(a, b) == pytest.approx(0.6)
        return make([a, b], [0.9, 0.8])

    def test_pair_linear(self, backend):
        for fn in (matrix_nms, matrix_nms_oracle):
            out = fn(self.two(), DecayKind.linear())
            assert out.scores[0] == 0.9
            assert out.scores[1] == pytest.approx(0.32, abs=1e-15)

    def test_pair_gaussian(self, backend):
        expect = 0.8 * math.exp(-0.36 / 0.5)
        assert expect == pytest.approx(0.389402, abs=1e-6)
        for fn in (matrix_nms, matrix_nms_oracle):
            assert fn(self.two(), DecayKind.gaussian(0.5)).scores[1] == pytest.approx(expect, abs=1e-15)

    def test_three_overlapping_vs_oracle(self, backend):
        a, b, c = cols(16, 0, 10), cols(16, 2, 12), cols(16, 5, 15)
        s = make([c, a, b], [0.7, 0.9, 0.8])
        d = DecayKind.gaussian(0.5)
        np.testing.assert_allclose(matrix_nms(s, d).scores, matrix_nms_oracle(s, d).scores, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(12))
    def test_random_vs_oracle(self, backend, seed):
        rng = np.random.default_rng(seed)
        s = random_set(rng, int(rng.integers(1, 60)), 16, 16, n_classes=int(rng.integers(1, 4)),
                       tie_scores=bool(seed % 2))
        for d in DECAYS:
            np.testing.assert_allclose(matrix_nms(s, d).scores, matrix_nms_oracle(s, d).scores,
                                       rtol=0, atol=1e-12)

    def test_duplicates_linear_finite(self, backend):
        # a triple of identical masks drives the compensation factor to zero
        m = cols(8, 0, 5)
        s = make([m, m, m, cols(8, 2, 7)], [0.9, 0.8, 0.7, 0.6])
        out = matrix_nms(s, DecayKind.linear()).scores
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, matrix_nms_oracle(s, DecayKind.linear()).scores, atol=1e-12)
        assert out[1] == 0.0 and out[2] == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_never_increases_and_top_fixed(self, backend, seed):
        s = random_set(np.random.default_rng(seed), 40, 16, 16)
        out = matrix_nms(s)
        top = int(np.argmax(s.scores))
        assert out.scores[0] == s.scores[top]
        order = np.argsort(-s.scores, kind="stable")
        assert np.all(out.scores <= s.scores[order])
        state = matrix_nms_decay(s)
        assert state.decay[0] == 1.0 and np.all(state.decay <= 1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_permutation_invariant(self, backend, seed):
        rng = np.random.default_rng(seed)
        s = random_set(rng, 30, 16, 16, n_classes=2)
        perm = rng.permutation(len(s))
        shuffled = s.with_instances(s[k] for k in perm)
        a = sorted(matrix_nms(s).scores)
        b = sorted(matrix_nms(shuffled).scores)
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("decay", DECAYS)
    def test_monotone_in_overlap(self, backend, decay):
        # b grows into a: the larger overlap never yields a larger decayed score
        a = cols(20, 0, 10)
        prev = None
        for start in range(10, -1, -1):
            b = cols(20, start, start + 10)
            sc = matrix_nms(make([a, b], [0.9, 0.8]), decay).scores[1]
            if prev is not None:
                assert sc <= prev
            prev = sc

    def test_thread_invariant(self, backend):
        s = random_set(np.random.default_rng(9), 80, 16, 16, n_classes=2)
        for d in DECAYS:
            base = matrix_nms(s, d, num_threads=1).scores
            for t in (2, 3):
                assert matrix_nms(s, d, num_threads=t).scores.tobytes() == base.tobytes()


class TestClassSeparation:
    def test_no_cross_class_suppression(self, backend):
        m = cols(8, 0, 4)
        s = make([m, m], [0.9, 0.8], classes=[0, 1])
        assert len(hard_nms(s, 0.5)) == 2
        assert len(fast_nms(s, 0.5)) == 2
        np.testing.assert_array_equal(soft_nms(s).scores, [0.9, 0.8])
        np.testing.assert_array_equal(matrix_nms(s).scores, [0.9, 0.8])
