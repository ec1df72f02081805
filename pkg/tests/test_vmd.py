import numpy as np
import pytest

from hiformer.errors import ConfigError, DataError
from hiformer.vmd import (
    ImfSet,
    VmdConfig,
    analytic_signal,
    decompose_all,
    decompose_columns,
    decompose_windows,
    vmd_decompose,
    write_imf_csv,
)


def two_tone(n=512, f1=0.03, f2=0.2):
    t = np.arange(n)
    return np.cos(2 * np.pi * f1 * t) + np.cos(2 * np.pi * f2 * t)


def interior(n, frac=0.05):
    lo = int(n * frac)
    return slice(lo, n - lo)


class TestAnalyticSignal:
    def test_harmonic_gives_unit_envelope(self):
        t = np.arange(256)
        x = np.cos(2 * np.pi * 0.07 * t)
        z = analytic_signal(x)
        np.testing.assert_allclose(z.real, x, atol=1e-10)
        envelope = np.abs(z)[interior(256)]
        np.testing.assert_allclose(envelope, 1.0, atol=0.05)
        # phase advances like the analytic exponential
        expected = np.exp(1j * 2 * np.pi * 0.07 * t)
        np.testing.assert_allclose(z[interior(256)], expected[interior(256)], atol=0.06)

    def test_constant_has_no_quadrature(self):
        z = analytic_signal(np.full(64, 5.0))
        np.testing.assert_allclose(z.imag, 0.0, atol=1e-12)
        np.testing.assert_allclose(z.real, 5.0, atol=1e-12)

    def test_negative_spectrum_empty_fft_oracle(self):
        rng = np.random.default_rng(0)
        for n in (128, 129):  # both parities
            z = analytic_signal(rng.standard_normal(n))
            spec = np.fft.fft(z)
            freqs = np.fft.fftfreq(n)
            # the Nyquist coefficient is shared between +0.5 and -0.5 and
            # must survive for Re(z) == x; strictly negative bins are empty
            neg = (freqs < 0) & (freqs != -0.5)
            assert np.max(np.abs(spec[neg])) < 1e-9

    def test_too_short_rejected(self):
        with pytest.raises(DataError):
            analytic_signal(np.ones(3))


class TestDecompose:
    def test_single_tone_recovery(self):
        t = np.arange(512)
        x = np.cos(2 * np.pi * 0.05 * t)
        s = vmd_decompose(x, VmdConfig(num_modes=1))
        assert abs(s.center_freqs[0] - 0.05) < 0.005
        sl = interior(512)
        rmse = np.sqrt(np.mean((s.modes[0, sl] - x[sl]) ** 2))
        assert rmse < 0.05

    def test_two_tone_center_frequencies(self):
        s = vmd_decompose(two_tone(), VmdConfig(num_modes=2))
        assert abs(s.center_freqs[0] - 0.03) < 0.01
        assert abs(s.center_freqs[1] - 0.2) < 0.01
        assert s.converged

    def test_center_freqs_sorted_even_with_random_init(self):
        s = vmd_decompose(two_tone(), VmdConfig(num_modes=2, init="random", seed=3))
        assert np.all(np.diff(s.center_freqs) >= 0)

    def test_residual_definition_holds(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(256)
        s = vmd_decompose(x, VmdConfig(num_modes=3))
        np.testing.assert_allclose(s.modes.sum(axis=0) + s.residual, x, atol=1e-12)

    def test_dual_ascent_tightens_reconstruction(self):
        rng = np.random.default_rng(0)
        x = two_tone() + 0.05 * rng.standard_normal(512)
        sl = interior(512)

        def rel(s):
            rec = s.modes.sum(axis=0)
            return np.linalg.norm(rec[sl] - x[sl]) / np.linalg.norm(x[sl])

        loose = vmd_decompose(x, VmdConfig(num_modes=2, tau=0.0))
        tight = vmd_decompose(x, VmdConfig(num_modes=2, tau=0.5))
        assert rel(tight) < rel(loose)
        assert rel(tight) < 0.05

    def test_reconstruction_history_decreases_and_converges(self):
        rng = np.random.default_rng(0)
        x = two_tone() + 0.05 * rng.standard_normal(512)
        s = vmd_decompose(x, VmdConfig(num_modes=2, tau=0.5), with_history=True)
        assert s.history is not None and len(s.history) == s.iterations_used
        assert np.mean(np.diff(s.history)) < 0
        assert s.history[-1] < 0.05

    def test_mode_orthogonality_proxy(self):
        s = vmd_decompose(two_tone(), VmdConfig(num_modes=2))
        u1, u2 = s.modes
        proxy = abs(u1 @ u2) / (np.linalg.norm(u1) * np.linalg.norm(u2))
        assert proxy < 0.1

    def test_spectral_energy_concentration(self):
        s = vmd_decompose(two_tone(), VmdConfig(num_modes=2))
        freqs = np.fft.fftfreq(512)
        half_width = np.sqrt(1.0 / (2.0 * 2000.0))  # wiener gain falls to 1/2 here
        for mode, omega in zip(s.modes, s.center_freqs):
            power = np.abs(np.fft.fft(mode)) ** 2
            near = np.abs(np.abs(freqs) - omega) <= half_width
            assert power[near].sum() / power.sum() >= 0.8

    def test_determinism_bit_identical(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(400)
        cfg = VmdConfig(num_modes=3, init="random", seed=11)
        a = vmd_decompose(x, cfg)
        b = vmd_decompose(x, cfg)
        np.testing.assert_array_equal(a.modes, b.modes)
        np.testing.assert_array_equal(a.center_freqs, b.center_freqs)
        assert a.iterations_used == b.iterations_used

    def test_nonconvergence_is_flagged_not_fatal(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(256)
        s = vmd_decompose(x, VmdConfig(num_modes=2, max_iters=2))
        assert isinstance(s, ImfSet)
        assert not s.converged
        assert s.iterations_used == 2

    def test_nonfinite_rejected(self):
        x = np.ones(128)
        x[5] = np.nan
        with pytest.raises(DataError):
            vmd_decompose(x, VmdConfig(num_modes=2))

    def test_too_many_modes_rejected(self):
        with pytest.raises(ConfigError):
            vmd_decompose(np.ones(32), VmdConfig(num_modes=7))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            VmdConfig(num_modes=0).validate()
        with pytest.raises(ConfigError):
            VmdConfig(tol=-1.0).validate()
        with pytest.raises(ConfigError):
            VmdConfig(init="magic").validate()


class TestDecomposeAll:
    def test_single_column_reduces_to_single_series(self):
        x = two_tone(256)
        cfg = VmdConfig(num_modes=2)
        stacked = decompose_all(x[:, None], cfg)
        single = vmd_decompose(x, cfg)
        assert stacked.shape == (256, 1, 2)
        np.testing.assert_array_equal(stacked[:, 0, :], single.modes.T)

    def test_identical_columns_identical_results(self):
        x = two_tone(256)
        cols = np.column_stack([x, x, x])
        sets = decompose_columns(cols, VmdConfig(num_modes=2))
        for s in sets[1:]:
            np.testing.assert_array_equal(s.modes, sets[0].modes)
            np.testing.assert_array_equal(s.center_freqs, sets[0].center_freqs)

    def test_two_distinct_columns_recover_their_tones(self):
        a = two_tone(512, 0.03, 0.2)
        b = two_tone(512, 0.06, 0.3)
        sets = decompose_columns(np.column_stack([a, b]), VmdConfig(num_modes=2))
        np.testing.assert_allclose(sets[0].center_freqs, [0.03, 0.2], atol=0.01)
        np.testing.assert_allclose(sets[1].center_freqs, [0.06, 0.3], atol=0.01)

    def test_error_names_turbine(self):
        cols = np.ones((128, 3))
        cols[4, 2] = np.inf
        with pytest.raises(DataError, match="turbine 2"):
            decompose_columns(cols, VmdConfig(num_modes=2))

    def test_thread_pool_matches_sequential(self, monkeypatch):
        rng = np.random.default_rng(4)
        cols = rng.standard_normal((128, 6))
        cfg = VmdConfig(num_modes=2)
        seq = decompose_all(cols, cfg)
        monkeypatch.setenv("HIFORMER_THREADS", "3")
        par = decompose_all(cols, cfg)
        np.testing.assert_allclose(par, seq, atol=1e-12)


class TestDecomposeWindows:
    def test_matches_per_window_decomposition(self):
        rng = np.random.default_rng(5)
        windows = rng.standard_normal((4, 64, 2))
        cfg = VmdConfig(num_modes=2)
        out = decompose_windows(windows, cfg)
        assert out.shape == (4, 64, 2, 2)
        for i in range(4):
            np.testing.assert_allclose(out[i], decompose_all(windows[i], cfg), atol=1e-12)

    def test_chunking_boundary(self):
        rng = np.random.default_rng(6)
        windows = rng.standard_normal((5, 48, 3))
        cfg = VmdConfig(num_modes=2)
        small = decompose_windows(windows, cfg, chunk=4)
        big = decompose_windows(windows, cfg, chunk=1024)
        np.testing.assert_allclose(small, big, atol=1e-12)


def test_imf_csv_dump(tmp_path):
    s = vmd_decompose(two_tone(128), VmdConfig(num_modes=2))
    path = tmp_path / "imfs.csv"
    write_imf_csv(s, path)
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    assert table.shape == (128, 4)  # t, two modes, residual
    np.testing.assert_allclose(table[:, 1:3], s.modes.T, atol=1e-12)
    header = path.read_text().splitlines()[0]
    assert header == "t,mode_1,mode_2,residual"
