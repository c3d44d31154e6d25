"""Closed-form and small-tau models of projected polarization transfer.

Under the default 2*pi convention an isolated pair exchanges a fraction
``(1 - cos(2 pi J tau)) / 2`` of its polarization difference per cycle,
whose small-tau limit is ``(pi J tau)**2``.  The N-site per-cycle matrix
puts ``(pi J_ij tau)**2`` off the diagonal and makes rows sum to one;
its single-cycle error against the exact dynamics is O(tau**4).
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_polarizations, check_tau
from .dynamics import initial_population, PopulationState
from .spin_core import DEFAULT_CONVENTION, polarization_signs

WARN_THRESHOLD = 0.2
REFUSE_THRESHOLD = 0.5


class SmallTauWarning(UserWarning):
    """|J| * tau is outside the comfortable range of the quadratic model."""


def pair_rate_coefficient(convention=DEFAULT_CONVENTION):
    """Constant ``c`` such that the per-cycle pair transfer is ``(c J tau)**2``."""
    return convention.angular_factor / 2.0


def two_spin_transfer(j_hz, tau, convention=DEFAULT_CONVENTION):
    """Fractions (stay, transfer) of a polarization after one cycle of a pair."""
    tau = check_tau(tau)
    phase = convention.angular_factor * float(j_hz) * tau
    transfer = (1.0 - np.cos(phase)) / 2.0
    return 1.0 - transfer, transfer


@dataclass(frozen=True, eq=False)
class SmallTauModel:
    matrix: np.ndarray
    tau: float
    max_j_tau: float
    valid: bool

    def power(self, n_cycles):
        return np.linalg.matrix_power(self.matrix, int(n_cycles))

    def propagate(self, initial, n_cycles):
        """Site polarizations after each of ``n_cycles`` cycles, shape (n_cycles + 1, n)."""
        P = np.asarray(initial, dtype=float)
        out = [P]
        for _ in range(int(n_cycles)):
            P = self.matrix @ P
            out.append(P)
        return np.array(out)


def small_tau_kernel(system, tau, convention=DEFAULT_CONVENTION,
                     warn_threshold=WARN_THRESHOLD, refuse_threshold=REFUSE_THRESHOLD):
    """Quadratic per-cycle site transfer matrix.

    Raises ``ValueError`` when ``max |J_ij| * tau`` exceeds ``refuse_threshold``
    and emits :class:`SmallTauWarning` above ``warn_threshold``.
    """
    tau = check_tau(tau)
    J = np.abs(system.couplings)
    max_j_tau = float(J.max() * tau) if J.size else 0.0
    if max_j_tau > refuse_threshold:
        raise ValueError(
            f"max |J| tau = {max_j_tau:.3g} exceeds {refuse_threshold}; "
            "the quadratic model does not apply, use the exact kernel"
        )
    if max_j_tau > warn_threshold:
        warnings.warn(f"max |J| tau = {max_j_tau:.3g} > {warn_threshold}; quadratic model is rough",
                      SmallTauWarning, stacklevel=2)
    p = (pair_rate_coefficient(convention) * J * tau) ** 2
    np.fill_diagonal(p, 0.0)
    matrix = p + np.diag(1.0 - p.sum(axis=1))
    return SmallTauModel(matrix=matrix, tau=tau, max_j_tau=max_j_tau,
                         valid=max_j_tau <= warn_threshold)


def exact_site_kernel(kernel, system):
    """Site-level map of one exact cycle, built column by column.

    Column ``i`` holds the site polarizations after one cycle starting from
    unit polarization on site ``i`` alone.
    """
    n = system.n
    signs = polarization_signs(n)
    K = np.empty((n, n))
    for i in range(n):
        P0 = np.zeros(n)
        P0[i] = 1.0
        p = initial_population(system, P0).populations
        K[:, i] = signs @ kernel.apply(p)
    return K


@dataclass(frozen=True, eq=False)
class EquilibriumPrediction:
    value: float
    site_values: np.ndarray
    group_names: tuple = ()
    group_values: np.ndarray = None


def equilibrium_prediction(initial, system=None):
    """Equipartition asymptote ``sum(P(0)) / n`` of a connected network.

    ``initial`` is a polarization vector or a :class:`PopulationState`;
    ``system`` adds group aggregates.
    """
    if isinstance(initial, PopulationState):
        P = initial.polarizations()
    else:
        P = check_polarizations(initial)
    n = P.size
    value = float(P.sum() / n) if n else 0.0
    site_values = np.full(n, value)
    if system is None:
        return EquilibriumPrediction(value, site_values)
    return EquilibriumPrediction(
        value,
        site_values,
        group_names=system.group_names,
        group_values=np.full(len(system.equivalence_groups), value),
    )


__all__ = [
    "EquilibriumPrediction",
    "REFUSE_THRESHOLD",
    "SmallTauModel",
    "SmallTauWarning",
    "WARN_THRESHOLD",
    "equilibrium_prediction",
    "exact_site_kernel",
    "pair_rate_coefficient",
    "small_tau_kernel",
    "two_spin_transfer",
]
