from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_difference, info_nce_loops
from trifit.objectives import (
    TAU,
    contrastive_with_grad,
    cross_entropy,
    cross_entropy_with_grad,
    info_nce,
    info_nce_with_grad,
    total_loss,
    trimodal_contrastive,
)


class TestInfoNCE:
    def test_orthonormal_pair(self):
        z = np.eye(2, 8)
        expected = math.log1p(math.exp(-1 / TAU))
        assert abs(info_nce(z, z) - expected) < 1e-15
        assert info_nce(z, z) < 1e-5

    @pytest.mark.parametrize("B", [2, 8, 32])
    def test_identical_rows(self, B, rng):
        row = rng.normal(size=16)
        z = np.tile(row, (B, 1))
        assert abs(info_nce(z, z.copy()) - math.log(B)) < 1e-10

    def test_symmetric_exactly(self, rng):
        for _ in range(50):
            z, zp = rng.normal(size=(2, 9, 33))
            assert info_nce(z, zp) == info_nce(zp, z)

    def test_matches_loop_oracle(self, rng):
        for B in (2, 3, 7):
            z, zp = rng.normal(size=(2, B, 12))
            assert abs(info_nce(z, zp) - info_nce_loops(z, zp, TAU)) < 1e-12

    def test_row_permutation_invariant(self, rng):
        z, zp = rng.normal(size=(2, 6, 10))
        perm = rng.permutation(6)
        assert abs(info_nce(z, zp) - info_nce(z[perm], zp[perm])) < 1e-12

    def test_positive_rescaling_invariant(self, rng):
        z, zp = rng.normal(size=(2, 6, 10))
        scale = rng.uniform(0.1, 10, size=(6, 1))
        assert abs(info_nce(z, zp) - info_nce(z * scale, zp)) < 1e-12

    def test_gradient(self, rng):
        z, zp = rng.normal(size=(2, 4, 5))
        _, dz, dzp = info_nce_with_grad(z, zp)
        for arr, grad in ((z, dz), (zp, dzp)):
            for idx in np.ndindex(arr.shape):
                fd = central_difference(lambda: info_nce(z, zp), arr, idx)
                assert abs(fd - grad[idx]) < 1e-7 * max(1.0, abs(grad[idx]))

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            info_nce(np.ones((1, 3)), np.ones((1, 3)))
        with pytest.raises(ValueError):
            info_nce(np.zeros((2, 3)), np.ones((2, 3)))

    @given(st.integers(2, 12), st.integers(2, 20), st.integers(0, 2**31))
    @settings(max_examples=60, deadline=None)
    def test_oracle_property(self, B, d, seed):
        z, zp = np.random.default_rng(seed).normal(size=(2, B, d))
        loss = info_nce(z, zp)
        assert math.isfinite(loss)
        assert abs(loss - info_nce_loops(z, zp, TAU)) < 1e-9


class TestTrimodal:
    def test_identical_is_log_b(self, rng):
        z = np.tile(rng.normal(size=8), (5, 1))
        ctr, _ = trimodal_contrastive(z, z, z)
        assert abs(ctr - math.log(5)) < 1e-12

    def test_cyclic_permutation(self, rng):
        a, b, c = rng.normal(size=(3, 6, 9))
        ctr, pairs = trimodal_contrastive(a, b, c)
        ctr2, pairs2 = trimodal_contrastive(c, a, b)
        assert abs(ctr - ctr2) < 1e-12
        assert sorted(pairs.values()) == pytest.approx(sorted(pairs2.values()), abs=1e-12)

    def test_oracle(self, rng):
        a, b, c = rng.normal(size=(3, 3, 10))
        ctr, pairs = trimodal_contrastive(a, b, c)
        expect = [info_nce_loops(a, b, TAU), info_nce_loops(a, c, TAU), info_nce_loops(b, c, TAU)]
        assert abs(ctr - sum(expect) / 3) < 1e-12
        assert abs(pairs[("seq", "dyn")] - expect[1]) < 1e-12

    def test_subset_pairs(self, rng):
        z = dict(zip(("seq", "str", "dyn"), rng.normal(size=(3, 4, 5))))
        ctr, losses, grads = contrastive_with_grad(z, ("seq", "dyn"))
        assert list(losses) == [("seq", "dyn")] and ctr == losses[("seq", "dyn")]
        assert contrastive_with_grad(z, ("str",))[0] == 0.0


class TestCrossEntropy:
    def test_uniform(self):
        assert abs(cross_entropy(np.zeros((3, 2)), np.array([0, 1, 1])) - math.log(2)) < 1e-15

    def test_stable(self):
        assert cross_entropy(np.array([[1000.0, 0.0]]), np.array([0])) < 1e-300
        assert abs(cross_entropy(np.array([[0.0, 1000.0]]), np.array([0])) - 1000.0) < 1e-9

    def test_gradient(self, rng):
        logits = rng.normal(size=(4, 2))
        labels = np.array([0, 1, 1, 0])
        _, g = cross_entropy_with_grad(logits, labels)
        for idx in np.ndindex(logits.shape):
            fd = central_difference(lambda: cross_entropy(logits, labels), logits, idx)
            assert abs(fd - g[idx]) < 1e-9


class TestTotal:
    def test_arithmetic(self):
        assert total_loss(1.0, 2.0, 0.3).total == pytest.approx(1.6, abs=1e-15)

    def test_lambda_zero_and_ctr_zero(self):
        assert total_loss(0.7, 5.0, 0.0).total == 0.7
        assert total_loss(0.7, 0.0, 0.3).total == 0.7
