import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from regmod.metrics import dice, directed_distances, nsd, surface_distances, surface_voxels, tre


def slab(pos, dims=(12, 10, 10), label=1):
    m = np.zeros(dims, dtype=np.int16)
    m[pos] = label
    return m


def blob_mask(rng, dims=(10, 10, 10)):
    c = rng.uniform(3, np.asarray(dims) - 4)
    r = rng.uniform(1.5, 3.0)
    g = np.indices(dims)
    return (np.sum((g - c.reshape(3, 1, 1, 1)) ** 2, axis=0) <= r * r).astype(np.int16)


class TestDice:
    def test_identical(self):
        m = slab(slice(2, 5))
        assert dice(m, m) == {1: 100.0}

    def test_half_overlap(self):
        a = np.zeros((8, 8, 8), dtype=int)
        b = np.zeros_like(a)
        a[0:4] = 1
        b[2:6] = 1
        assert dice(a, b)[1] == pytest.approx(50.0)

    def test_disjoint_and_absent(self):
        a = slab(slice(0, 2))
        b = slab(slice(5, 7))
        assert dice(a, b, labels=[1, 2]) == {1: 0.0, 2: None}

    def test_multi_label(self):
        a = np.zeros((4, 4, 4), dtype=int)
        a[:2], a[2:] = 1, 2
        assert dice(a, a) == {1: 100.0, 2: 100.0}

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice(np.zeros((3, 3, 3)), np.zeros((3, 3, 4)))


class TestSurface:
    def test_surface_of_cube(self):
        m = np.zeros((6, 6, 6), dtype=bool)
        m[1:5, 1:5, 1:5] = True
        s = surface_voxels(m)
        assert s.sum() == 4 ** 3 - 2 ** 3

    def test_grid_edge_counts_as_background(self):
        assert surface_voxels(np.ones((3, 3, 3), dtype=bool)).sum() == 26

    def test_parallel_slabs(self):
        a, b = slab(5), slab(8)
        hd, assd = surface_distances(a, b)
        assert hd == pytest.approx(3.0) and assd == pytest.approx(3.0)

    def test_anisotropic_spacing(self):
        hd, assd = surface_distances(slab(5), slab(8), spacing=(2.0, 0.5, 0.5))
        assert hd == pytest.approx(6.0) and assd == pytest.approx(6.0)

    def test_nsd_threshold(self):
        a, b = slab(5), slab(8)
        assert nsd(a, b, tau=3.0) == 100.0
        assert nsd(a, b, tau=2.9) == 0.0

    def test_empty_label(self):
        assert surface_distances(slab(5), slab(5, label=2)) is None
        assert nsd(slab(5), np.zeros((12, 10, 10))) is None

    def test_negative_tau(self):
        with pytest.raises(ValueError):
            nsd(slab(5), slab(5), tau=-1)

    def test_directed_chunks(self, rng):
        src = rng.normal(size=(50, 3))
        dst = rng.normal(size=(30, 3))
        assert np.allclose(directed_distances(src, dst, chunk=7),
                           directed_distances(src, dst))

    def test_matches_oracle(self, rng):
        for _ in range(3):
            a, b = blob_mask(rng), blob_mask(rng)
            if a.sum() == 0 or b.sum() == 0:
                continue
            sp = (1.0, 1.5, 0.8)
            got = surface_distances(a, b, spacing=sp)
            ref = oracles.surface_distances(a.astype(bool), b.astype(bool), sp)
            assert np.allclose(got, ref, atol=1e-9)
            assert nsd(a, b, tau=1.2, spacing=sp) == pytest.approx(
                oracles.nsd(a.astype(bool), b.astype(bool), 1.2, sp))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1))
    def test_symmetry_and_scaling(self, seed):
        rng = np.random.default_rng(seed)
        a, b = blob_mask(rng), blob_mask(rng)
        ab = surface_distances(a, b)
        ba = surface_distances(b, a)
        assert np.allclose(ab, ba)
        scaled = surface_distances(a, b, spacing=(2.0, 2.0, 2.0))
        assert np.allclose(scaled, 2 * np.asarray(ab))
        lo = nsd(a, b, tau=0.5)
        hi = nsd(a, b, tau=2.0)
        assert 0 <= lo <= hi <= 100
        assert nsd(a, b, tau=2.0) == pytest.approx(nsd(b, a, tau=2.0))


class TestTre:
    def test_constant_offset(self):
        u = np.zeros((3, 8, 8, 8))
        u[0] = 3.0
        p = np.array([[1.0, 2.0, 3.0], [4.5, 4.0, 1.0]])
        res = tre(u, p, p, spacing=(1.5, 1.0, 1.0))
        assert np.allclose(res["errors"], 4.5)
        assert res["mean"] == pytest.approx(4.5)
        assert res["std"] == pytest.approx(0.0, abs=1e-12)
        assert res["median"] == res["p75"] == pytest.approx(4.5)

    def test_exact_field(self, rng):
        u = rng.normal(size=(3, 6, 6, 6))
        p = np.array([[1.0, 1.0, 1.0], [2.0, 3.0, 4.0]])
        q = p + u[:, [1, 2], [1, 3], [1, 4]].T
        assert tre(u, p, q)["mean"] == pytest.approx(0.0, abs=1e-12)

    def test_statistics(self):
        u = np.zeros((3, 6, 6, 6))
        p = np.zeros((4, 3))
        q = np.zeros((4, 3))
        q[:, 0] = [1, 2, 3, 4]
        res = tre(u, p, q)
        assert res["mean"] == 2.5 and res["median"] == 2.5
        assert res["p75"] == pytest.approx(3.25)
        assert res["std"] == pytest.approx(np.std([1, 2, 3, 4]))

    def test_errors(self):
        u = np.zeros((3, 4, 4, 4))
        with pytest.raises(ValueError):
            tre(u, np.zeros((2, 3)), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            tre(u, [[0, 0, 5.0]], [[0, 0, 0.0]])
        with pytest.raises(ValueError):
            tre(u, np.zeros((0, 3)), np.zeros((0, 3)))
