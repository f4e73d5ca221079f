import numpy as np
import pytest
from scipy.integrate import quad

from fermisse.bath import (
    BathSpec,
    DiscreteModes,
    Lorentzian,
    MarkovKernel,
    TimeGrid,
    build_kernels,
    default_window,
    discretize_spectrum,
    fermi_occupation,
    lorentzian_density,
    markov_kernel,
)

KB = 8.617333262e-5


class TestFermiOccupation:
    def test_symmetry_point(self):
        for T in (0.01, 0.1, 5.0):
            assert fermi_occupation(2e-5, T, 2e-5) == pytest.approx(0.5, abs=1e-15)

    def test_zero_temperature_step(self):
        assert fermi_occupation(3e-5, 0.0, 2e-5) == 0.0
        assert fermi_occupation(1e-5, 0.0, 2e-5) == 1.0
        assert fermi_occupation(2e-5, 0.0, 2e-5) == 0.5

    def test_reference_value(self):
        # frozen from a 30-digit evaluation of 1/(1+exp((w-mu)/kB T))
        val = fermi_occupation(3e-5, 0.1, 2e-5)
        assert val == pytest.approx(0.23858519822372987, rel=1e-12)

    def test_monotone_in_omega(self):
        omegas = np.linspace(-5e-5, 9e-5, 301)
        occ = fermi_occupation(omegas, 0.08, 2e-5)
        assert np.all(np.diff(occ) <= 0)
        assert np.all((occ >= 0) & (occ <= 1))

    def test_extreme_arguments_stable(self):
        assert fermi_occupation(1.0, 1e-6, 0.0) < 1e-300
        assert fermi_occupation(-1.0, 1e-6, 0.0) == 1.0

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError):
            fermi_occupation(1e-5, -0.1, 0.0)


class TestLorentzianDensity:
    def test_peak_value(self):
        lor = Lorentzian(1e-6, 0.1, 3e-5)
        assert lorentzian_density(3e-5, lor) == pytest.approx(1e-6, rel=1e-14)

    def test_half_width_point(self):
        lor = Lorentzian(1e-6, 0.1, 3e-5)
        w = 3e-5 * (1 + 0.1)
        assert lorentzian_density(w, lor) == pytest.approx(5e-7, rel=1e-12)

    def test_arithmetic_value(self):
        lor = Lorentzian(1e-6, 0.1, 3e-5)
        assert lorentzian_density(2.7e-5, lor) == pytest.approx(5e-7, rel=1e-12)

    def test_rejects_discrete(self):
        modes = DiscreteModes(np.array([1.0]), np.array([0.1]))
        with pytest.raises(TypeError):
            lorentzian_density(1.0, modes)

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            Lorentzian(-1e-6, 0.1, 3e-5)
        with pytest.raises(ValueError):
            Lorentzian(1e-6, 0.0, 3e-5)


class TestDiscretizeSpectrum:
    def test_single_node_carries_window_weight(self):
        lor = Lorentzian(1e-6, 0.5, 3e-5)
        out = discretize_spectrum(lor, 2.9e-5, 3.1e-5, 1)
        # one-point Gauss rule: midpoint node, full-window weight
        assert out.omegas[0] == pytest.approx(3e-5)
        assert np.sum(out.couplings**2) == pytest.approx(
            lorentzian_density(3e-5, lor) * 0.2e-5, rel=1e-12
        )

    def test_kernel_at_zero_matches_quadrature(self):
        lor = Lorentzian(1e-6, 0.1, 3e-5)
        lo, hi = 3e-5 * (1 - 0.5), 3e-5 * (1 + 0.5)
        out = discretize_spectrum(lor, lo, hi, 200)
        exact, _ = quad(lambda w: lorentzian_density(w, lor), lo, hi, epsabs=1e-18)
        assert np.sum(out.couplings**2) == pytest.approx(exact, rel=1e-2)

    def test_discrete_passthrough(self):
        modes = DiscreteModes(np.array([1.0, 2.0]), np.array([0.1, 0.2]))
        assert discretize_spectrum(modes, 0.0, 3.0, 50) is modes

    def test_degenerate_window_rejected(self):
        lor = Lorentzian(1e-6, 0.1, 3e-5)
        with pytest.raises(ValueError):
            discretize_spectrum(lor, 3e-5, 3e-5, 10)

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            DiscreteModes(np.array([2.0, 1.0]), np.array([0.1, 0.1]))
        with pytest.raises(ValueError):
            DiscreteModes(np.array([1.0]), np.array([-0.1]))
        with pytest.raises(ValueError):
            DiscreteModes(np.array([]), np.array([]))


class TestBuildKernels:
    def test_single_mode_vacuum_form(self):
        g = 0.3
        modes = DiscreteModes(np.array([1.7]), np.array([g]))
        bath = BathSpec(modes, 0.0, -5.0)
        grid = TimeGrid(2.0, 100)
        kern = build_kernels(bath, grid)
        tau = grid.times()
        assert np.allclose(kern.kappa_b, g**2 * np.exp(-1j * 1.7 * tau), atol=1e-15)
        assert np.all(kern.kappa_c == 0)
        assert kern.vacuum

    def test_filled_band_kills_decay_branch(self):
        modes = DiscreteModes(np.array([1.0, 1.5]), np.array([0.2, 0.1]))
        bath = BathSpec(modes, 0.0, 10.0)  # mu above every mode: nbar = 1
        kern = build_kernels(bath, TimeGrid(1.0, 10))
        assert np.all(kern.kappa_b == 0)
        assert kern.kappa_c[0] == pytest.approx(0.2**2 + 0.1**2)

    def test_equal_time_values_are_branch_weights(self):
        lor = Lorentzian(1e-6, 0.1, 3e-5)
        modes = discretize_spectrum(lor, *default_window(lor), 400)
        bath = BathSpec(modes, 0.1, 2e-5)
        kern = build_kernels(bath, TimeGrid(1e5, 10))
        lo, hi = default_window(lor)
        exact, _ = quad(
            lambda w: (1 - fermi_occupation(w, 0.1, 2e-5)) * lorentzian_density(w, lor),
            lo,
            hi,
            epsabs=1e-22,
            limit=400,
        )
        assert kern.kappa_b[0].imag == 0.0
        assert kern.kappa_b[0].real == pytest.approx(exact, rel=1e-6)

    def test_entries_match_generating_sum(self):
        rng = np.random.default_rng(3)
        modes = DiscreteModes(np.sort(rng.uniform(0.5, 2.5, 7)), rng.uniform(0.05, 0.4, 7))
        bath = BathSpec(modes, 0.3 / KB, 1.2)
        grid = TimeGrid(3.0, 60)
        kern = build_kernels(bath, grid)
        nbar = bath.occupations(modes)
        ts = grid.times()
        for _ in range(100):
            i = rng.integers(0, 61)
            j = rng.integers(0, i + 1)
            kb = np.sum((1 - nbar) * modes.couplings**2 * np.exp(-1j * modes.omegas * (ts[i] - ts[j])))
            kc = np.sum(nbar * modes.couplings**2 * np.exp(1j * modes.omegas * (ts[i] - ts[j])))
            assert abs(kern.kb(i, j) - kb) <= 1e-12
            assert abs(kern.kc(i, j) - kc) <= 1e-12

    def test_conjugate_symmetry_and_bound(self):
        modes = DiscreteModes(np.array([0.7, 1.3, 2.1]), np.array([0.2, 0.3, 0.15]))
        bath = BathSpec(modes, 0.5 / KB, 1.0)
        grid = TimeGrid(4.0, 80)
        kern = build_kernels(bath, grid)
        for i, j in ((5, 2), (40, 17), (80, 0)):
            assert kern.kb(j, i) == np.conj(kern.kb(i, j))
        # triangle bound on the generating sums, every lag
        assert np.max(np.abs(kern.kappa_b)) <= kern.kappa_b[0].real + 1e-12
        assert np.max(np.abs(kern.kappa_c)) <= kern.kappa_c[0].real + 1e-12

    def test_stationarity_on_shifted_pairs(self):
        modes = DiscreteModes(np.array([0.9, 1.8]), np.array([0.25, 0.1]))
        bath = BathSpec(modes, 0.2 / KB, 1.1)
        kern = build_kernels(bath, TimeGrid(2.0, 50))
        for (i, j, d) in ((10, 4, 7), (30, 0, 20), (25, 25, 10)):
            assert abs(kern.kb(i, j) - kern.kb(i + d, j + d)) <= 1e-12
            assert abs(kern.kc(i, j) - kern.kc(i + d, j + d)) <= 1e-12

    def test_empty_modes_rejected(self):
        with pytest.raises(ValueError):
            DiscreteModes(np.array([]), np.array([]))

    def test_explicit_quadrature_grid(self):
        lor = Lorentzian(1e-6, 0.1, 3e-5)
        nodes = np.array([2.8e-5, 3.2e-5])
        weights = np.array([1e-6, 2e-6])
        bath = BathSpec(lor, 0.0, -1.0, omega_grid=(nodes, weights))
        modes = bath.modes()
        assert np.allclose(modes.omegas, nodes)
        assert np.allclose(
            modes.couplings**2, lorentzian_density(nodes, lor) * weights
        )


class TestMarkovKernel:
    def test_marker_construction(self):
        marker = markov_kernel(1.0)
        assert isinstance(marker, MarkovKernel)
        assert marker.gamma == 1.0

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            markov_kernel(0.0)
        with pytest.raises(ValueError):
            markov_kernel(-2.0)


class TestTimeGrid:
    def test_basic(self):
        grid = TimeGrid(2.0, 4)
        assert grid.dt == 0.5
        assert np.allclose(grid.times(), [0, 0.5, 1.0, 1.5, 2.0])

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid(0.0, 10)
        with pytest.raises(ValueError):
            TimeGrid(1.0, 1)

    def test_kernel_csv(self, tmp_path):
        modes = DiscreteModes(np.array([1.0]), np.array([0.2]))
        kern = build_kernels(BathSpec(modes, 0.0, -1.0), TimeGrid(1.0, 4))
        path = tmp_path / "k.csv"
        kern.to_csv(path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,s,re_kb,im_kb,re_kc,im_kc"
        assert len(lines) == 1 + sum(i + 1 for i in range(5))
