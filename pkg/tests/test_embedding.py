from __future__ import annotations

import numpy as np
import pytest

from conftest import make_structure
from oracles import knn_brute, random_chain
from trifit.embedding import (
    DYN_DIM,
    DYN_FEATURES,
    STR_DIM,
    STR_FEATURES,
    RandomProjection,
    SequenceContext,
    compose_sequence_embedding,
    dynamics_features,
    dynamics_projection,
    embed_dynamics,
    embed_structure,
    mock_sequence_encoder,
    structure_features,
    structure_projection,
)
from trifit.gnm import gnm_features


def regenerate(seed, in_dim, out_dim):
    """Box-Muller from raw PCG64 uniforms, written out independently."""
    n = in_dim * out_dim
    gen = np.random.Generator(np.random.PCG64(seed))
    half = (n + 1) // 2
    u1 = gen.random(half)
    u2 = gen.random(half)
    radius = np.sqrt(-2.0 * np.log(1.0 - u1))
    z = np.empty(2 * half)
    z[:half] = radius * np.cos(2 * np.pi * u2)
    z[half:] = radius * np.sin(2 * np.pi * u2)
    return z[:n].reshape(in_dim, out_dim) / np.sqrt(in_dim)


class TestStructureFeatures:
    def test_collinear_middle(self, line3):
        x = structure_features(line3, 2)
        assert x.shape == (STR_FEATURES,)
        np.testing.assert_allclose(x[:2], [3.8, 3.8])
        assert np.all(x[2:20] == 0)
        dirs = x[20:80].reshape(20, 3)
        np.testing.assert_allclose(dirs[:2], [[-1, 0, 0], [1, 0, 0]])
        assert np.all(dirs[2:] == 0)
        np.testing.assert_array_equal(x[80:], [0, 0, 0])

    def test_translation_invariant(self, rng):
        # generic coordinates: exact distance ties could flip order under rounding
        ca = rng.uniform(-15, 15, size=(30, 3))
        a = structure_features(make_structure(ca), 11)
        b = structure_features(make_structure(ca + np.array([64.0, -128.0, 32.0])), 11)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_random_against_brute(self, rng):
        ca = rng.uniform(0, 20, size=(25, 3))
        s = make_structure(ca)
        for site in (1, 13, 25):
            x = structure_features(s, site)
            assert np.all(np.diff(x[:20]) >= 0)
            np.testing.assert_allclose(x[:20], [d for _, d in knn_brute(ca, 20)[site - 1]], atol=1e-12)
            norms = np.linalg.norm(x[20:80].reshape(20, 3), axis=1)
            np.testing.assert_allclose(norms, 1.0, atol=1e-9)
            assert abs(np.linalg.norm(x[80:]) - 1.0) < 1e-9

    def test_unknown_site(self, line3):
        with pytest.raises(KeyError):
            structure_features(line3, 9)


class TestProjections:
    @pytest.mark.parametrize("proj", [structure_projection(), dynamics_projection()])
    def test_zero_and_linearity(self, proj, rng):
        assert np.all(proj(np.zeros(proj.in_dim)) == 0)
        x, y = rng.normal(size=(2, proj.in_dim))
        np.testing.assert_allclose(proj(2.0 * x - 3.0 * y), 2.0 * proj(x) - 3.0 * proj(y), atol=1e-12)

    @pytest.mark.parametrize("in_dim,out_dim", [(STR_FEATURES, STR_DIM), (DYN_FEATURES, DYN_DIM)])
    def test_seeded_row(self, in_dim, out_dim):
        proj = RandomProjection(17, in_dim, out_dim)
        e0 = np.zeros(in_dim)
        e0[0] = 1.0
        np.testing.assert_allclose(proj(e0), regenerate(17, in_dim, out_dim)[0], rtol=0, atol=1e-15)

    def test_default_shapes(self):
        assert embed_structure(np.ones(83), structure_projection()).shape == (512,)
        assert embed_dynamics(np.ones(42), dynamics_projection()).shape == (256,)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            embed_structure(np.ones(82), structure_projection())
        with pytest.raises(ValueError):
            embed_dynamics(np.ones(43), dynamics_projection())

    def test_matrix_is_read_only(self):
        with pytest.raises(ValueError):
            structure_projection().matrix[0, 0] = 1.0


class TestDynamicsFeatures:
    def test_triangle_site_one(self, line3):
        g = gnm_features(line3)
        x = dynamics_features(g, 1)
        assert x.shape == (DYN_FEATURES,)
        assert x[0] == 0 and x[-1] == 0
        np.testing.assert_array_equal(x[1:21], g.U[0])
        np.testing.assert_array_equal(x[21:41], g.C[0])
        assert np.all(x[3:21] == 0) and np.all(x[23:41] == 0)

    def test_site_mode_same_width(self, rng):
        g = gnm_features(make_structure(random_chain(rng, 30)))
        assert dynamics_features(g, 4, "site").shape == (42,)

    def test_out_of_range(self, line3):
        with pytest.raises(KeyError):
            dynamics_features(gnm_features(line3), 4)


class TestSequence:
    def test_identity(self, rng):
        ctx = SequenceContext(rng.normal(size=8), rng.normal(size=(20, 8)))
        np.testing.assert_array_equal(compose_sequence_embedding(ctx, "K", "K"), ctx.h)

    def test_toy_arithmetic(self):
        table = np.zeros((20, 2))
        table[0] = [0.5, 0.0]  # A
        table[6] = [0.0, 0.5]  # H
        ctx = SequenceContext(np.array([1.0, 2.0]), table)
        np.testing.assert_allclose(compose_sequence_embedding(ctx, "A", "H"), [0.5, 2.5])

    def test_swap_negates_delta(self, rng):
        ctx = SequenceContext(rng.normal(size=16), rng.normal(size=(20, 16)))
        total = compose_sequence_embedding(ctx, "W", "P") + compose_sequence_embedding(ctx, "P", "W")
        np.testing.assert_allclose(total, 2 * ctx.h, atol=1e-12)

    def test_mock_deterministic(self):
        a = mock_sequence_encoder("ACDEFGHIK", 3)
        b = mock_sequence_encoder("ACDEFGHIK", 3)
        np.testing.assert_array_equal(a.h, b.h)
        np.testing.assert_array_equal(a.token_table, b.token_table)
        assert a.h.shape == (1280,) and a.token_table.shape == (20, 1280)

    def test_mock_positions_distinct(self):
        seq = "ACDEFGHIKLMNPQRSTVWY" * 50
        heads = {mock_sequence_encoder(seq, p, dim=32).h.tobytes() for p in range(1, 1001)}
        assert len(heads) == 1000

    def test_mock_unit_variance(self):
        h = mock_sequence_encoder("MKV" * 10, 5).h
        assert abs(h.mean()) < 0.15 and abs(h.std() - 1.0) < 0.1

    def test_mock_position_range(self):
        with pytest.raises(ValueError):
            mock_sequence_encoder("ACD", 4)
