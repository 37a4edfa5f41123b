import numpy as np
import pytest

from thermoreport.cube_io import ThermalCube
from thermoreport.errors import InputError
from thermoreport.pct import pct_decompose, pct_magnitude
from thermoreport.preprocess import PulseTiming



def spatial_cube(seed, h=8, w=8, frames=48, t0=6):
    rng = np.random.default_rng(seed)
    data = np.zeros((h, w, frames))
    data[:, :, t0 + 1 :] = rng.normal(size=(h, w, frames - t0 - 1))
    return ThermalCube(data), PulseTiming(t0, t0 + 2)


class TestDecompose:
    def test_rank_one_cube(self):
        rng = np.random.default_rng(5)
        h, w, frames, t0 = 8, 8, 48, 6
        s = rng.normal(size=(h, w))
        d = rng.normal(size=frames - t0 - 1)
        data = np.zeros((h, w, frames))
        data[:, :, t0 + 1 :] = s[:, :, None] * d[None, None, :]
        res = pct_decompose(ThermalCube(data), PulseTiming(t0, t0 + 2), k=3)
        assert res.singular_values[1] / res.singular_values[0] < 1e-8
        # PC1 proportional to the spatial pattern (mean-centered), up to sign
        pc1 = res.components[0].values.ravel()
        target = (s - s.mean()).ravel()
        target = target / np.linalg.norm(target)
        assert min(
            np.abs(pc1 - target).max(), np.abs(pc1 + target).max()
        ) < 1e-8

    def test_k_zero_rejected(self):
        cube, timing = spatial_cube(0)
        with pytest.raises(InputError):
            pct_decompose(cube, timing, k=0)

    def test_k_too_large_rejected(self):
        cube, timing = spatial_cube(1)
        with pytest.raises(InputError):
            pct_decompose(cube, timing, k=1000)

    def test_matches_eigendecomposition_oracle(self):
        cube, timing = spatial_cube(2, h=8, w=8, frames=39, t0=6)
        k = 5
        res = pct_decompose(cube, timing, k=k)
        # oracle: eigenvectors of A A^T for the same centered matrix
        a = cube.data[:, :, timing.t0 + 1 :].reshape(64, -1)
        a = a - a.mean(axis=0, keepdims=True)
        evals, evecs = np.linalg.eigh(a @ a.T)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        for i in range(k):
            assert res.singular_values[i] == pytest.approx(
                np.sqrt(max(evals[i], 0.0)), rel=1e-8
            )
            got = res.components[i].values.ravel()
            want = evecs[:, i]
            assert min(np.abs(got - want).max(), np.abs(got + want).max()) < 1e-6

    def test_reconstruction(self):
        cube, timing = spatial_cube(3, h=8, w=8, frames=39, t0=6)
        a = cube.data[:, :, timing.t0 + 1 :].reshape(64, -1)
        a = a - a.mean(axis=0, keepdims=True)
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        assert np.linalg.norm(u @ np.diag(s) @ vt - a) / np.linalg.norm(a) < 1e-6

    def test_orthonormality(self):
        cube, timing = spatial_cube(4)
        res = pct_decompose(cube, timing, k=6)
        u = np.stack([c.values.ravel() for c in res.components], axis=1)
        gram = u.T @ u
        assert np.abs(gram - np.eye(6)).max() < 1e-6

    def test_singular_values_non_increasing(self):
        cube, timing = spatial_cube(6)
        res = pct_decompose(cube, timing, k=6)
        sv = res.singular_values
        assert all(sv[i] >= sv[i + 1] for i in range(len(sv) - 1))

    def test_scaling_equivariance(self):
        cube, timing = spatial_cube(7)
        res = pct_decompose(cube, timing, k=4)
        scaled = pct_decompose(ThermalCube(2.5 * cube.data), timing, k=4)
        for a, b in zip(res.components, scaled.components):
            assert np.abs(a.values - b.values).max() < 1e-9
        for sa, sb in zip(res.singular_values, scaled.singular_values):
            assert sb == pytest.approx(2.5 * sa, rel=1e-12)

    def test_sign_convention_deterministic(self):
        cube, timing = spatial_cube(8)
        res = pct_decompose(cube, timing, k=3)
        for comp in res.components:
            flat = comp.values.ravel()
            assert flat[np.argmax(np.abs(flat))] > 0


class TestMagnitude:
    def test_absolute_value(self):
        cube, timing = spatial_cube(9)
        res = pct_decompose(cube, timing, k=2)
        mag = pct_magnitude(res, 1)
        assert np.array_equal(mag.values, np.abs(res.components[0].values))
        assert mag.values.min() >= 0

    def test_index_out_of_range(self):
        cube, timing = spatial_cube(10)
        res = pct_decompose(cube, timing, k=2)
        with pytest.raises(InputError):
            pct_magnitude(res, 3)
        with pytest.raises(InputError):
            pct_magnitude(res, 0)

    def test_modality_tag(self):
        from thermoreport.detect import Modality

        cube, timing = spatial_cube(11)
        res = pct_decompose(cube, timing, k=1)
        assert pct_magnitude(res, 1).modality is Modality.PCT_MAG
