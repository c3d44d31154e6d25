import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb

from conftest import system_from_matrix
from oracles import hamiltonian as oracle_hamiltonian
from oracles import random_couplings
from zenotocsy.spin_core import (
    HamiltonianConvention,
    SpinSystem,
    basis_bits,
    build_hamiltonian,
    build_spin_system,
    sector_decompose,
    sector_hamiltonians,
    sector_sizes,
    single_spin_operator,
    total_sz,
)


class TestSpinSystem:
    def test_two_site_construction(self):
        s = build_spin_system(["A", "B"], [("A", "B", 10.0)])
        np.testing.assert_array_equal(s.couplings, [[0, 10], [10, 0]])
        assert s.equivalence_groups == (("A",), ("B",))

    def test_unlisted_pairs_default_zero(self):
        s = build_spin_system(["A", "B", "C"], [("A", "B", 3.0)])
        assert s.coupling("A", "C") == 0.0
        assert s.coupling("C", "B") == 0.0

    def test_conflicting_duplicate(self):
        with pytest.raises(ValueError, match="conflict"):
            build_spin_system(["A", "B"], [("A", "B", 1.0), ("B", "A", 2.0)])

    def test_consistent_duplicate_accepted(self):
        s = build_spin_system(["A", "B"], [("A", "B", 1.0), ("B", "A", 1.0)])
        assert s.coupling("A", "B") == 1.0

    def test_unknown_label(self):
        with pytest.raises(ValueError, match="unknown"):
            build_spin_system(["A", "B"], [("A", "Z", 1.0)])

    def test_self_coupling(self):
        with pytest.raises(ValueError, match="self"):
            build_spin_system(["A", "B"], [("A", "A", 1.0)])

    def test_pyridine_preset(self, pyridine):
        assert pyridine.labels == ("1", "1'", "2", "2'", "3")
        expected = {
            ("1", "2"): 4.86, ("1'", "2'"): 4.86, ("1", "2'"): 0.98, ("1'", "2"): 0.98,
            ("1", "3"): 1.85, ("1'", "3"): 1.85, ("2", "3"): 7.66, ("2'", "3"): 7.66,
            ("1", "1'"): 0.0, ("2", "2'"): 0.0,
        }
        for (a, b), j in expected.items():
            assert pyridine.coupling(a, b) == j
            assert pyridine.coupling(b, a) == j
        assert pyridine.is_connected()
        assert pyridine.group_names == ("{1,1'}", "{2,2'}", "{3}")

    def test_asymmetric_matrix_rejected(self):
        with pytest.raises(ValueError):
            SpinSystem(["A", "B"], [[0, 1], [2, 0]])

    def test_diagonal_rejected(self):
        with pytest.raises(ValueError):
            SpinSystem(["A", "B"], [[1, 1], [1, 0]])

    def test_groups_must_partition(self):
        J = np.zeros((3, 3))
        with pytest.raises(ValueError, match="exactly one"):
            SpinSystem(["A", "B", "C"], J, [["A", "B"]])
        with pytest.raises(ValueError, match="unknown"):
            SpinSystem(["A", "B", "C"], J, [["A", "B"], ["C", "D"]])

    def test_too_many_spins(self):
        with pytest.raises(ValueError):
            SpinSystem([str(i) for i in range(17)], np.zeros((17, 17)))

    def test_immutable(self, pyridine):
        with pytest.raises(ValueError):
            pyridine.couplings[0, 1] = 1.0


class TestSingleSpinOperator:
    def test_one_spin_z(self):
        np.testing.assert_array_equal(single_spin_operator(1, 0, "z"), np.diag([0.5, -0.5]))

    def test_two_spin_x_on_site_zero(self):
        Ix = single_spin_operator(2, 0, "x")
        bits = basis_bits(2)
        for a, b in itertools.product(range(4), repeat=2):
            differs = bits[a] != bits[b]
            expected = 0.5 if (differs[0] and not differs[1]) else 0.0
            assert Ix[a, b] == expected

    @pytest.mark.parametrize("axis", ["x", "y", "z"])
    @pytest.mark.parametrize("site", [0, 1, 2])
    def test_square_spectrum(self, site, axis):
        op = single_spin_operator(3, site, axis)
        np.testing.assert_allclose(op, op.conj().T)
        np.testing.assert_allclose(np.linalg.eigvalsh(op @ op), 0.25, atol=1e-14)

    def test_site_out_of_range(self):
        with pytest.raises(ValueError):
            single_spin_operator(2, 2, "x")

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            single_spin_operator(2, 0, "w")

    def test_commutation(self):
        x, y, z = (single_spin_operator(2, 1, a) for a in "xyz")
        np.testing.assert_allclose(x @ y - y @ x, 1j * z, atol=1e-15)


class TestHamiltonian:
    def test_two_spin_spectrum(self):
        s = build_spin_system(["A", "B"], [("A", "B", 1.0)])
        w = np.sort(np.linalg.eigvalsh(build_hamiltonian(s)))
        np.testing.assert_allclose(w, [-3 * 2 * np.pi / 4] + [2 * np.pi / 4] * 3, atol=1e-12)

    def test_zero_couplings(self):
        s = SpinSystem(["A", "B", "C"], np.zeros((3, 3)))
        assert not build_hamiltonian(s).any()

    def test_matches_kronecker_oracle(self, rng):
        for n in (2, 3, 4):
            J = random_couplings(rng, n)
            H = build_hamiltonian(system_from_matrix(J))
            np.testing.assert_allclose(H, oracle_hamiltonian(J).real, atol=1e-12)
            assert np.abs(oracle_hamiltonian(J).imag).max() < 1e-14

    def test_angular_factor(self, rng):
        J = random_couplings(rng, 3)
        s = system_from_matrix(J)
        H1 = build_hamiltonian(s, HamiltonianConvention(np.pi))
        H2 = build_hamiltonian(s)
        np.testing.assert_allclose(2 * H1, H2, rtol=1e-14)

    def test_nonpositive_factor(self):
        with pytest.raises(ValueError):
            HamiltonianConvention(0.0)

    def test_pyridine_commutes_with_total_sz(self, pyridine):
        H = build_hamiltonian(pyridine)
        Sz = np.diag(total_sz(5))
        assert np.abs(H @ Sz - Sz @ H).max() == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
    def test_symmetric_traceless_conserving(self, n, seed):
        J = random_couplings(np.random.default_rng(seed), n, -10, 10)
        H = build_hamiltonian(system_from_matrix(J))
        assert np.array_equal(H, H.T)
        assert abs(np.trace(H)) < 1e-10
        Sz = np.diag(total_sz(n))
        assert np.abs(H @ Sz - Sz @ H).max() == 0.0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
    def test_permutation_equivalence(self, n, seed):
        rng = np.random.default_rng(seed)
        s = system_from_matrix(random_couplings(rng, n))
        p = s.permuted(rng.permutation(n))
        np.testing.assert_allclose(
            np.linalg.eigvalsh(build_hamiltonian(s)), np.linalg.eigvalsh(build_hamiltonian(p)), atol=1e-10
        )
        a, b = sector_hamiltonians(s), sector_hamiltonians(p)
        assert list(a.twice_mz) == list(b.twice_mz)
        for (x, _), (y, _) in zip(a.eigh, b.eigh):
            np.testing.assert_allclose(np.sort(x), np.sort(y), atol=1e-10)


class TestSectors:
    def test_sizes(self):
        assert list(sector_sizes(5)) == [1, 5, 10, 10, 5, 1]
        for n in range(1, 8):
            assert list(sector_sizes(n)) == [comb(n, k, exact=True) for k in range(n + 1)]

    def test_two_spin_zero_sector(self):
        s = build_spin_system(["A", "B"], [("A", "B", 1.0)])
        d = sector_hamiltonians(s)
        k = list(d.twice_mz).index(0)
        assert list(d.indices[k]) == [1, 2]
        assert d.blocks[k].shape == (2, 2)

    def test_partition(self, pyridine):
        d = sector_hamiltonians(pyridine)
        allidx = np.sort(np.concatenate(d.indices))
        np.testing.assert_array_equal(allidx, np.arange(32))

    def test_reassembly_exact(self, rng):
        for n in (2, 3, 4, 5):
            s = system_from_matrix(random_couplings(rng, n))
            H = build_hamiltonian(s)
            assert np.array_equal(sector_decompose(s, H).assemble(), H)
            assert np.array_equal(sector_hamiltonians(s).assemble(), H)

    def test_eigenvalues_match_full_diagonalization(self, rng):
        s = system_from_matrix(random_couplings(rng, 4))
        full = np.linalg.eigvalsh(oracle_hamiltonian(s.couplings))
        merged = np.sort(sector_hamiltonians(s).eigenvalues())
        np.testing.assert_allclose(merged, full, atol=1e-10)

    def test_corrupted_hamiltonian(self, pyridine):
        H = build_hamiltonian(pyridine).copy()
        H[0, 5] = H[5, 0] = 1e-3
        with pytest.raises(ValueError, match="different Mz sectors"):
            sector_decompose(pyridine, H)
