import numpy as np
import pytest

from thermoreport.cube_io import ThermalCube
from thermoreport.detect import FeatureMap, Modality
from thermoreport.errors import InputError
from thermoreport.ppt import (
    ppt_full_spectrum,
    ppt_phase_gradient,
    ppt_transform,
    write_spectrum,
)
from thermoreport.preprocess import PulseTiming


def tone_cube(signal_fn, h=4, w=4, n_post=32, t0=8):
    frames = t0 + 1 + n_post
    tau = np.arange(n_post, dtype=float)
    series = signal_fn(tau)
    data = np.zeros((h, w, frames))
    data[:, :, t0 + 1 :] = series
    return ThermalCube(data), PulseTiming(t0, t0 + 2)


class TestTransform:
    def test_pure_cosine(self):
        n = 32
        cube, timing = tone_cube(lambda tau: np.cos(2 * np.pi * 3 * tau / n), n_post=n)
        res = ppt_transform(cube, timing, dft_bin=3)
        assert np.abs(res.amplitude.values - n / 2).max() < 1e-9
        assert np.abs(res.phase.values).max() < 1e-9

    def test_pure_sine_phase(self):
        n = 32
        cube, timing = tone_cube(lambda tau: np.sin(2 * np.pi * 3 * tau / n), n_post=n)
        res = ppt_transform(cube, timing, dft_bin=3)
        assert np.abs(res.phase.values + np.pi / 2).max() < 1e-9

    def test_matches_naive_dft_oracle(self, rng):
        h = w = 4
        t0, n = 8, 24
        data = np.zeros((h, w, t0 + 1 + n))
        data[:, :, t0 + 1 :] = rng.normal(size=(h, w, n))
        cube = ThermalCube(data)
        timing = PulseTiming(t0, t0 + 2)
        for dft_bin in (1, 5, n // 2):
            res = ppt_transform(cube, timing, dft_bin=dft_bin)
            for y in range(h):
                for x in range(w):
                    series = data[y, x, t0 + 1 :]
                    acc = complex(0.0)
                    for k in range(n):  # naive O(N^2) reference, one bin
                        acc += series[k] * np.exp(-2j * np.pi * dft_bin * k / n)
                    assert res.amplitude.values[y, x] == pytest.approx(abs(acc), rel=1e-9)
                    expected_phase = np.arctan2(acc.imag, acc.real)
                    # circular distance: at the Nyquist bin Im is rounding
                    # noise and the sign of +/-pi is not meaningful
                    diff = (res.phase.values[y, x] - expected_phase + np.pi) % (2 * np.pi) - np.pi
                    assert abs(diff) < 1e-9

    def test_bin_out_of_range(self):
        cube, timing = tone_cube(lambda tau: tau, n_post=32)
        with pytest.raises(InputError):
            ppt_transform(cube, timing, dft_bin=0)
        with pytest.raises(InputError):
            ppt_transform(cube, timing, dft_bin=17)

    def test_gain_invariance_of_phase(self, rng):
        h = w = 6
        t0, n = 8, 40
        data = np.zeros((h, w, t0 + 1 + n))
        data[:, :, t0 + 1 :] = rng.normal(size=(h, w, n)) + 3.0
        cube = ThermalCube(data)
        timing = PulseTiming(t0, t0 + 2)
        a = ppt_transform(cube, timing).phase.values
        b = ppt_transform(ThermalCube(3.7 * cube.data), timing).phase.values
        assert np.abs(a - b).max() < 1e-9

    def test_phase_range(self, rng):
        data = np.zeros((8, 8, 49))
        data[:, :, 9:] = rng.normal(size=(8, 8, 40))
        res = ppt_transform(ThermalCube(data), PulseTiming(8, 10), dft_bin=7)
        assert (res.phase.values > -np.pi).all()
        assert (res.phase.values <= np.pi).all()

    def test_parseval(self, rng):
        data = np.zeros((6, 6, 41))
        data[:, :, 9:] = rng.normal(size=(6, 6, 32))
        cube = ThermalCube(data)
        timing = PulseTiming(8, 10)
        spec = ppt_full_spectrum(cube, timing)
        lhs = (np.abs(spec) ** 2).sum(axis=2)
        rhs = 32 * (data[:, :, 9:] ** 2).sum(axis=2)
        assert np.abs(lhs - rhs).max() / np.abs(rhs).max() < 1e-6

    def test_spectrum_dump_layout(self, rng, tmp_path):
        data = np.zeros((4, 5, 25))
        data[:, :, 9:] = rng.normal(size=(4, 5, 16))
        cube = ThermalCube(data)
        spec = ppt_full_spectrum(cube, PulseTiming(8, 10))
        path = tmp_path / "spec.bin"
        write_spectrum(spec, path)
        raw = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(16, 4, 5, 2)
        # bin-major, row-major frames, (re, im) interleaved
        assert raw[3, 2, 1, 0] == np.float32(spec[2, 1, 3].real)
        assert raw[3, 2, 1, 1] == np.float32(spec[2, 1, 3].imag)

    def test_bin_frequency(self):
        cube, timing = tone_cube(lambda tau: np.cos(tau), n_post=32)
        res = ppt_transform(cube, timing, dft_bin=4)
        assert res.bin_frequency == pytest.approx(4 / 32)
        cube_hz = ThermalCube(cube.data, frame_rate_hz=50.0)
        res_hz = ppt_transform(cube_hz, timing, dft_bin=4)
        assert res_hz.bin_frequency == pytest.approx(4 * 50.0 / 32)


class TestPhaseGradient:
    def test_constant_phase(self):
        fmap = FeatureMap(np.full((8, 8), 1.2), Modality.PPT_PHASE)
        out = ppt_phase_gradient(fmap)
        assert np.abs(out.values).max() == 0.0

    def test_wrap_at_seam(self):
        # +pi-0.01 on the left half, -pi+0.01 on the right: the wrapped jump
        # is 0.02 across the seam, so central differences see 0.01/px there
        vals = np.full((8, 8), np.pi - 0.01)
        vals[:, 4:] = -np.pi + 0.01
        out = ppt_phase_gradient(FeatureMap(vals, Modality.PPT_PHASE))
        seam = out.values[2, 3:5]
        assert seam == pytest.approx([0.01, 0.01], abs=1e-12)
        assert out.values.max() < 0.1  # nowhere near 2*pi

    def test_constant_offset_invariance(self, rng):
        base = rng.uniform(-3.0, 3.0, size=(8, 8))

        def wrap(x):
            out = np.mod(x + np.pi, 2 * np.pi) - np.pi
            out[out <= -np.pi] += 2 * np.pi
            return out

        a = ppt_phase_gradient(FeatureMap(wrap(base), Modality.PPT_PHASE)).values
        b = ppt_phase_gradient(FeatureMap(wrap(base + 1.0), Modality.PPT_PHASE)).values
        assert np.abs(a - b).max() < 1e-9

    def test_matches_stencil_oracle(self, rng):
        vals = rng.uniform(-np.pi + 1e-6, np.pi, size=(10, 12))
        out = ppt_phase_gradient(FeatureMap(vals, Modality.PPT_PHASE)).values

        def wrap(d):
            w = (d + np.pi) % (2 * np.pi) - np.pi
            return w + 2 * np.pi if w <= -np.pi else w

        h, w = vals.shape
        for y in range(h):
            for x in range(w):
                if 0 < x < w - 1:
                    gx = wrap(vals[y, x + 1] - vals[y, x - 1]) / 2
                elif x == 0:
                    gx = wrap(vals[y, 1] - vals[y, 0])
                else:
                    gx = wrap(vals[y, -1] - vals[y, -2])
                if 0 < y < h - 1:
                    gy = wrap(vals[y + 1, x] - vals[y - 1, x]) / 2
                elif y == 0:
                    gy = wrap(vals[1, x] - vals[0, x])
                else:
                    gy = wrap(vals[-1, x] - vals[-2, x])
                assert out[y, x] == pytest.approx(np.hypot(gx, gy), rel=1e-9, abs=1e-12)

    def test_non_negative(self, rng):
        vals = rng.uniform(-np.pi + 1e-9, np.pi, size=(16, 16))
        out = ppt_phase_gradient(FeatureMap(vals, Modality.PPT_PHASE))
        assert (out.values >= 0).all()
        assert out.modality is Modality.PPT_PHASE_EDGE
