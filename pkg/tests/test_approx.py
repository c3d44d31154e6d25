import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import system_from_matrix
from zenotocsy.approx import (
    SmallTauWarning,
    equilibrium_prediction,
    exact_site_kernel,
    pair_rate_coefficient,
    small_tau_kernel,
    two_spin_transfer,
)
from zenotocsy.dynamics import Preparation, initial_population, kernel_for, simulate_projected
from zenotocsy.presets import two_spin
from zenotocsy.spin_core import HamiltonianConvention, SpinSystem


def model_error(system, tau):
    exact = exact_site_kernel(kernel_for(system, tau), system)
    return np.abs(small_tau_kernel(system, tau).matrix - exact).max()


class TestTwoSpinTransfer:
    def test_zero_tau(self):
        assert two_spin_transfer(10.0, 0.0) == (1.0, 0.0)

    def test_half_period(self):
        np.testing.assert_allclose(two_spin_transfer(10.0, 0.05), (0.0, 1.0), atol=1e-15)

    def test_quarter_period(self):
        np.testing.assert_allclose(two_spin_transfer(10.0, 0.025), (0.5, 0.5), atol=1e-15)

    def test_matches_exact_dynamics(self, rng):
        for _ in range(100):
            J, tau = rng.uniform(0.5, 20), rng.uniform(0, 0.2)
            stay, moved = two_spin_transfer(J, tau)
            traj = simulate_projected(two_spin(J), tau, Preparation.excite([0]), 1)
            np.testing.assert_allclose(traj.values[1], [stay, moved], atol=1e-10)
            assert stay + moved == pytest.approx(1.0, abs=1e-15)

    def test_negative_tau(self):
        with pytest.raises(ValueError):
            two_spin_transfer(1.0, -0.1)


class TestSmallTauKernel:
    def test_uncoupled_identity(self):
        m = small_tau_kernel(SpinSystem(["a", "b", "c"], np.zeros((3, 3))), 0.01)
        np.testing.assert_array_equal(m.matrix, np.eye(3))

    def test_two_spin_entry(self):
        m = small_tau_kernel(two_spin(10.0), 0.001)
        assert m.matrix[0, 1] == pytest.approx((np.pi * 10 * 0.001) ** 2, rel=1e-14)
        assert m.matrix[0, 1] == pytest.approx(9.8696e-4, rel=1e-4)
        _, exact = two_spin_transfer(10.0, 0.001)
        assert m.matrix[0, 1] == pytest.approx(exact, rel=1e-3)

    def test_half_coefficient_disagrees_with_exact(self):
        """The halved coefficient would be off by a factor two against the exact transfer."""
        _, exact = two_spin_transfer(10.0, 0.001)
        assert exact / ((np.pi * 10 * 0.001) ** 2 / 2) == pytest.approx(2.0, rel=1e-3)

    def test_coefficient_follows_convention(self):
        assert pair_rate_coefficient() == pytest.approx(np.pi)
        conv = HamiltonianConvention(np.pi)
        m = small_tau_kernel(two_spin(10.0), 0.001, conv)
        _, exact = two_spin_transfer(10.0, 0.001, conv)
        assert m.matrix[0, 1] == pytest.approx(exact, rel=1e-3)

    def test_pyridine_ratio(self, pyridine):
        m = small_tau_kernel(pyridine, 0.001).matrix
        i = pyridine.index
        assert m[i("2"), i("3")] / m[i("1"), i("3")] == pytest.approx((7.66 / 1.85) ** 2, rel=1e-12)

    def test_rows_sum_to_one(self, pyridine):
        m = small_tau_kernel(pyridine, 0.01)
        np.testing.assert_allclose(m.matrix.sum(axis=1), 1.0, atol=1e-15)
        assert m.matrix.min() >= 0 and m.valid

    def test_warn_and_refuse(self, pyridine):
        with pytest.warns(SmallTauWarning):
            m = small_tau_kernel(pyridine, 0.04)
        assert not m.valid
        with pytest.raises(ValueError, match="exact kernel"):
            small_tau_kernel(pyridine, 0.1)

    def test_no_warning_in_regime(self, pyridine):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            small_tau_kernel(pyridine, 0.01)

    def test_global_sign_flip(self, pyridine):
        a = small_tau_kernel(pyridine, 0.002).matrix
        b = small_tau_kernel(pyridine.with_couplings(-pyridine.couplings), 0.002).matrix
        np.testing.assert_array_equal(a, b)

    def test_power_and_propagate(self, pyridine):
        m = small_tau_kernel(pyridine, 0.001)
        P0 = np.array([0, 0, 1, 1, 0.0])
        np.testing.assert_allclose(m.propagate(P0, 7)[-1], m.power(7) @ P0, atol=1e-14)

    def test_model_tracks_exact_build_up(self, pyridine):
        m = small_tau_kernel(pyridine, 0.001)
        P0 = np.array([1.0, 1.0, 0, 0, 0])
        approx = m.propagate(P0, 20)
        exact = simulate_projected(pyridine, 0.001, Preparation.custom(P0), 20).values
        np.testing.assert_allclose(approx, exact, atol=1e-4)


class TestExactSiteKernel:
    def test_zero_tau(self, pyridine):
        np.testing.assert_allclose(exact_site_kernel(kernel_for(pyridine, 0.0), pyridine), np.eye(5), atol=1e-14)

    def test_two_spin_closed_form(self, rng):
        for _ in range(20):
            J, tau = rng.uniform(1, 10), rng.uniform(0, 0.1)
            K = exact_site_kernel(kernel_for(two_spin(J), tau), two_spin(J))
            stay, moved = two_spin_transfer(J, tau)
            np.testing.assert_allclose(K, [[stay, moved], [moved, stay]], atol=1e-12)

    def test_matches_oracle(self, rng):
        J = oracles.random_couplings(rng, 4)
        s = system_from_matrix(J)
        np.testing.assert_allclose(exact_site_kernel(kernel_for(s, 0.013), s), oracles.site_kernel(J, 0.013), atol=1e-10)

    def test_fourth_order_pyridine(self, pyridine):
        taus = [0.002, 0.001, 0.0005]
        errs = [model_error(pyridine, t) for t in taus]
        for a, b in zip(errs, errs[1:]):
            assert 16 * 0.7 <= a / b <= 16 * 1.3

    @settings(max_examples=15, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
    def test_fourth_order_random(self, n, seed):
        rng = np.random.default_rng(seed)
        J = oracles.random_couplings(rng, n, density=0.6)
        s = system_from_matrix(J)
        tau = 0.02 / J.max()
        ratio = model_error(s, tau) / model_error(s, tau / 2)
        assert 16 * 0.7 <= ratio <= 16 * 1.3


class TestEquilibrium:
    def test_pyridine_values(self, pyridine):
        assert equilibrium_prediction(Preparation.excite(["2", "2'"]).polarizations(pyridine)).value == pytest.approx(0.4)
        assert equilibrium_prediction(Preparation.excite(["1", "1'"]).polarizations(pyridine)).value == pytest.approx(0.4)
        assert equilibrium_prediction(Preparation.deplete(["1", "1'"]).polarizations(pyridine)).value == pytest.approx(0.6)

    def test_zero(self):
        assert equilibrium_prediction(np.zeros(4)).value == 0.0

    def test_uniform_echo(self):
        assert equilibrium_prediction(np.full(3, 0.7)).value == pytest.approx(0.7)

    def test_groups(self, pyridine):
        pred = equilibrium_prediction(initial_population(pyridine, Preparation.excite(["3"])), pyridine)
        assert pred.group_names == pyridine.group_names
        np.testing.assert_allclose(pred.group_values, 0.2)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=8), st.randoms(use_true_random=False))
    def test_permutation_invariant(self, P, random):
        shuffled = list(P)
        random.shuffle(shuffled)
        assert equilibrium_prediction(P).value == pytest.approx(equilibrium_prediction(shuffled).value, abs=1e-15)

    def test_equals_long_time_limit(self, rng):
        for _ in range(5):
            n = int(rng.integers(2, 6))
            s = system_from_matrix(oracles.random_couplings(rng, n, density=0.5))
            P0 = rng.uniform(-1, 1, n)
            traj = simulate_projected(s, 0.0191, Preparation.custom(P0), 3000)
            assert np.abs(traj.values[-1] - equilibrium_prediction(P0).value).max() < 0.02
