"""Coherent and projected (periodically dephased) evolution of spin populations.

One projection cycle is free evolution ``U = exp(-i H tau)`` followed by the
pinching channel that scales every off-diagonal density-matrix element by
the fidelity ``eps`` (``eps = 0`` erases them).  For ideal projection the
diagonal evolves by the doubly stochastic kernel ``T_ab = |U_ab|^2``, which
is block diagonal over total-Mz sectors; this is the fast path.  Leaky
projection (``eps > 0``) falls back to full density-matrix cycling.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import (
    check_fraction,
    check_hermitian,
    check_n_cycles,
    check_polarizations,
    check_tau,
    resolve_sites,
)
from .spin_core import (
    DEFAULT_CONVENTION,
    HamiltonianConvention,
    SpinSystem,
    build_hamiltonian,
    polarization_signs,
    sector_hamiltonians,
    single_spin_operator,
)

DEFAULT_MAX_CYCLES = 100_000


@dataclass(frozen=True)
class ProjectionSpec:
    """Imperfections of the projection cycle.

    ``fidelity`` is the factor retained by off-diagonal elements at each
    projection (0 is ideal pinching).  ``damping`` (1/s) shrinks the
    deviation from the fully mixed state by ``exp(-damping * tau)`` per cycle.
    """

    fidelity: float = 0.0
    damping: float = 0.0

    def __post_init__(self):
        check_fraction(self.fidelity, "fidelity")
        if not np.isfinite(self.damping) or self.damping < 0:
            raise ValueError(f"damping must be >= 0, got {self.damping}")

    @property
    def ideal(self):
        return self.fidelity == 0.0


@dataclass(frozen=True)
class Preparation:
    """Initial per-site polarization pattern.

    ``kind`` is ``"excite"`` (listed sites at +1, others 0), ``"deplete"``
    (listed sites at 0, others +1) or ``"custom"`` (explicit vector).
    """

    kind: str
    sites: tuple = ()
    values: tuple = None

    def __post_init__(self):
        if self.kind not in ("excite", "deplete", "custom"):
            raise ValueError(f"preparation kind must be excite, deplete or custom, got {self.kind!r}")
        if self.kind == "custom":
            if self.values is None:
                raise ValueError("custom preparation needs a polarization vector")
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        elif self.values is not None:
            raise ValueError(f"{self.kind} preparation takes sites, not values")
        object.__setattr__(self, "sites", tuple(self.sites))

    @classmethod
    def excite(cls, sites):
        return cls("excite", tuple(sites))

    @classmethod
    def deplete(cls, sites):
        return cls("deplete", tuple(sites))

    @classmethod
    def custom(cls, values):
        return cls("custom", values=tuple(values))

    def polarizations(self, system):
        n = system.n
        if self.kind == "custom":
            return check_polarizations(self.values, n)
        chosen = resolve_sites(system.labels, self.sites)
        P = np.zeros(n) if self.kind == "excite" else np.ones(n)
        P[chosen] = 1.0 if self.kind == "excite" else 0.0
        return P

    def as_dict(self):
        if self.kind == "custom":
            return {"kind": "custom", "values": list(self.values)}
        return {"kind": self.kind, "sites": [str(s) for s in self.sites]}

    def describe(self):
        if self.kind == "custom":
            return "custom(" + ",".join(f"{v:g}" for v in self.values) + ")"
        return f"{self.kind}{{{','.join(str(s) for s in self.sites)}}}"


@dataclass(frozen=True, eq=False)
class PopulationState:
    """Diagonal of a density matrix in the product basis."""

    populations: np.ndarray

    def __post_init__(self):
        p = np.array(self.populations, dtype=float)
        if p.ndim != 1 or p.size == 0 or (p.size & (p.size - 1)):
            raise ValueError(f"populations must be a vector of length 2^n, got shape {p.shape}")
        if np.any(p < -1e-14):
            raise ValueError(f"negative population {p.min():.3g}")
        p[p < 0] = 0.0
        total = p.sum()
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"populations must sum to 1, got {total!r}")
        p.setflags(write=False)
        object.__setattr__(self, "populations", p)

    @property
    def n(self):
        return self.populations.size.bit_length() - 1

    def polarizations(self):
        return polarization_signs(self.n) @ self.populations


def initial_population(system, spec):
    """Product-state populations for a :class:`Preparation` or a polarization vector."""
    if isinstance(spec, Preparation):
        P = spec.polarizations(system)
    else:
        P = check_polarizations(spec, system.n)
    return PopulationState(product_populations(P))


def product_populations(P):
    p = np.ones(1)
    for x in P:
        p = np.kron(p, [(1.0 + x) / 2.0, (1.0 - x) / 2.0])
    return p


@dataclass(frozen=True, eq=False)
class Propagator:
    """Per-sector unitaries ``exp(-i H_k tau)``."""

    sectors: object
    tau: float
    blocks: tuple

    def full(self):
        d = self.sectors.dim
        U = np.zeros((d, d), dtype=complex)
        for ix, blk in zip(self.sectors.indices, self.blocks):
            U[np.ix_(ix, ix)] = blk
        return U


def propagator(sectors, tau):
    """Unitary free-evolution operator of each Mz sector.

    Uses the cached eigendecomposition of the real symmetric blocks, so
    repeated calls for different ``tau`` cost one matrix product per sector.
    """
    tau = float(tau)
    if not np.isfinite(tau):
        raise ValueError(f"tau must be finite, got {tau}")
    if tau == 0.0:
        # exact identity; the eigenbasis round trip leaves ~1e-16 residue
        blocks = [np.eye(len(w), dtype=complex) for w, _ in sectors.eigh]
    else:
        blocks = [(V * np.exp(-1j * w * tau)) @ V.T for w, V in sectors.eigh]
    return Propagator(sectors, tau, tuple(blocks))


def pinch(rho, fidelity=0.0):
    """Scale the off-diagonal elements of ``rho`` by ``fidelity``."""
    rho = check_hermitian(rho)
    fidelity = check_fraction(fidelity, "fidelity")
    out = fidelity * rho
    idx = np.diag_indices_from(rho)
    out[idx] = rho[idx]
    return out


@dataclass(frozen=True, eq=False)
class TransferKernel:
    """Population map of one evolve-then-pinch cycle, block diagonal in Mz."""

    blocks: tuple
    indices: tuple
    tau: float
    convention: HamiltonianConvention = DEFAULT_CONVENTION
    propagator: Propagator = field(default=None, repr=False)

    @property
    def n(self):
        return sum(len(ix) for ix in self.indices).bit_length() - 1

    def apply(self, populations):
        p = np.asarray(populations, dtype=float)
        out = np.empty_like(p)
        for ix, T in zip(self.indices, self.blocks):
            out[ix] = T @ p[ix]
        return out

    def dense(self):
        d = 2 ** self.n
        T = np.zeros((d, d))
        for ix, blk in zip(self.indices, self.blocks):
            T[np.ix_(ix, ix)] = blk
        return T

    def stochasticity_error(self):
        """Largest deviation of any row or column sum from 1."""
        worst = 0.0
        for blk in self.blocks:
            worst = max(worst, np.max(np.abs(blk.sum(axis=0) - 1)), np.max(np.abs(blk.sum(axis=1) - 1)))
        return float(worst)


def transfer_kernel(prop):
    """Doubly stochastic kernel ``|U_ab|^2`` for ideal projection."""
    blocks = tuple(np.abs(U) ** 2 for U in prop.blocks)
    return TransferKernel(
        blocks=blocks,
        indices=prop.sectors.indices,
        tau=prop.tau,
        convention=prop.sectors.convention,
        propagator=prop,
    )


def kernel_for(system, tau, convention=DEFAULT_CONVENTION):
    """Transfer kernel of ``system`` at ``tau``, built from its sector Hamiltonians."""
    tau = check_tau(tau)
    sectors = sector_hamiltonians(system, convention)
    return transfer_kernel(propagator(sectors, tau))


@dataclass(frozen=True, eq=False)
class PolarizationTrajectory:
    """Per-site polarization ``2<Iz_i>`` sampled at cycle boundaries ``m * tau``."""

    times: np.ndarray
    values: np.ndarray
    labels: tuple
    groups: tuple = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.labels):
            raise ValueError(f"values must be (n_times, {len(self.labels)}), got {values.shape}")
        if len(self.times) != values.shape[0]:
            raise ValueError("times and values disagree in length")
        if np.any(np.abs(values) > 1 + 1e-9):
            raise ValueError("polarization outside [-1, 1]")
        groups = self.groups
        if groups is None:
            groups = tuple((lab,) for lab in self.labels)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "groups", tuple(tuple(g) for g in groups))

    @property
    def n_cycles(self):
        return self.values.shape[0] - 1

    @property
    def group_names(self):
        return tuple("{" + ",".join(g) + "}" for g in self.groups)

    @property
    def group_values(self):
        """Mean polarization of each equivalence group."""
        cols = [[self.labels.index(s) for s in g] for g in self.groups]
        return np.column_stack([self.values[:, c].mean(axis=1) for c in cols])

    def site(self, label):
        return self.values[:, self.labels.index(str(label))]


DENSE_KERNEL_MAX_DIM = 1024


def _population_cycles(kernel, p, n_cycles, shrink, signs):
    out = np.empty((n_cycles + 1, signs.shape[0]))
    out[0] = signs @ p
    uniform = 1.0 / p.size
    # one dense matvec beats a Python loop over sectors for small systems
    step = kernel.dense().__matmul__ if p.size <= DENSE_KERNEL_MAX_DIM else kernel.apply
    for m in range(1, n_cycles + 1):
        p = step(p)
        if shrink != 1.0:
            p = uniform + shrink * (p - uniform)
        out[m] = signs @ p
    return out


def _density_cycles(U, p, n_cycles, fidelity, shrink, signs):
    rho = np.diag(p).astype(complex)
    Ud = U.conj().T
    out = np.empty((n_cycles + 1, signs.shape[0]))
    out[0] = signs @ p
    eye = np.eye(p.size) / p.size
    off = ~np.eye(p.size, dtype=bool)
    for m in range(1, n_cycles + 1):
        rho = U @ rho @ Ud
        rho[off] *= fidelity
        if shrink != 1.0:
            rho = eye + shrink * (rho - eye)
        out[m] = signs @ np.real(np.diag(rho))
    return out


def evolve_projected(kernel, initial, n_cycles, projection=None, *, system=None,
                     max_cycles=DEFAULT_MAX_CYCLES):
    """Iterate ``n_cycles`` evolve-then-project cycles from ``initial``.

    Parameters
    ----------
    kernel : TransferKernel
    initial : PopulationState
    n_cycles : int
    projection : ProjectionSpec, optional
        Defaults to ideal projection without damping.
    system : SpinSystem, optional
        Supplies site labels and equivalence groups for the trajectory.
    max_cycles : int
        Refuse longer runs.

    Returns
    -------
    PolarizationTrajectory
    """
    n_cycles = check_n_cycles(n_cycles, max_cycles)
    projection = projection or ProjectionSpec()
    if not isinstance(initial, PopulationState):
        initial = PopulationState(initial)
    n = kernel.n
    if initial.n != n:
        raise ValueError(f"initial state has {initial.n} spins, kernel has {n}")
    signs = polarization_signs(n)
    shrink = float(np.exp(-projection.damping * kernel.tau))
    p = initial.populations.copy()
    if projection.ideal:
        values = _population_cycles(kernel, p, n_cycles, shrink, signs)
    else:
        if kernel.propagator is None:
            raise ValueError("leaky projection needs the kernel's propagator")
        values = _density_cycles(kernel.propagator.full(), p, n_cycles, projection.fidelity, shrink, signs)

    if not np.all(np.isfinite(values)):
        raise FloatingPointError("projected trajectory contains non-finite values")

    if system is not None:
        labels, groups = system.labels, system.equivalence_groups
    else:
        labels, groups = tuple(str(i) for i in range(n)), None
    metadata = {
        "tau_s": kernel.tau,
        "n_cycles": n_cycles,
        "fidelity": projection.fidelity,
        "damping_per_s": projection.damping,
        "angular_factor": kernel.convention.angular_factor,
    }
    return PolarizationTrajectory(
        times=kernel.tau * np.arange(n_cycles + 1),
        values=values,
        labels=labels,
        groups=groups,
        metadata=metadata,
    )


def simulate_projected(system, tau, preparation, n_cycles, projection=None,
                       convention=DEFAULT_CONVENTION, max_cycles=DEFAULT_MAX_CYCLES):
    """Build the kernel for ``system`` and run :func:`evolve_projected`."""
    kernel = kernel_for(system, tau, convention)
    traj = evolve_projected(
        kernel,
        initial_population(system, preparation),
        n_cycles,
        projection,
        system=system,
        max_cycles=max_cycles,
    )
    if isinstance(preparation, Preparation):
        traj.metadata["preparation"] = preparation.as_dict()
    return traj


def monotonicity_violations(values, tol=0.01):
    """Number of per-site steps against the site's net direction by more than ``tol``."""
    values = np.asarray(values)
    net = np.sign(values[-1] - values[0])
    steps = np.diff(values, axis=0) * net
    return int(np.sum(steps < -tol))


def tau_sweep(system, preparation, taus, total_time, projection=None, convention=DEFAULT_CONVENTION):
    """Compare cycle times at a fixed total mixing time.

    Each row holds the cycle count ``round(total_time / tau)``, the fraction
    of the initial polarization that left the sites prepared above the mean,
    the largest distance from equipartition at the end, and the number of
    monotonicity violations.
    """
    taus = [check_tau(t, allow_zero=False) for t in taus]
    if len(taus) < 2:
        raise ValueError("a tau sweep needs at least two values")
    P0 = preparation.polarizations(system)
    eq = P0.mean()
    sources = P0 > eq
    rows = []
    for tau in taus:
        n_cycles = int(round(total_time / tau))
        traj = simulate_projected(system, tau, preparation, n_cycles, projection, convention)
        final = traj.values[-1]
        moved = (P0[sources] - final[sources]).sum() / P0[sources].sum() if sources.any() else 0.0
        rows.append({
            "tau_s": tau,
            "n_cycles": n_cycles,
            "transferred_fraction": float(moved),
            "equipartition_distance": float(np.max(np.abs(final - eq))),
            "monotonicity_violations": monotonicity_violations(traj.values),
        })
    return rows


@dataclass(frozen=True, eq=False)
class CoherentTrajectory:
    times: np.ndarray
    values: np.ndarray
    names: tuple
    metadata: dict = field(default_factory=dict)


def _operator_specs(spec):
    """Normalize ``(site, axis)`` or a list of them into a list."""
    if isinstance(spec, (list, tuple)) and spec and isinstance(spec[0], (list, tuple)):
        return [tuple(s) for s in spec]
    return [tuple(spec)]


def evolve_coherent(system, initial, times, observables, convention=DEFAULT_CONVENTION):
    """Unitary evolution of a single-spin deviation operator, no projections.

    ``initial`` is a ``(site, axis)`` pair, or a list of pairs whose
    operators are summed (e.g. both members of an equivalent pair excited
    by one selective pulse).  Every entry of ``observables`` is a
    ``(site, axis)`` pair; sites may be labels or indices.  Returned values
    are ``Tr(O U rho0 U^+) / Tr(rho0^2)``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise ValueError("time grid is empty")
    if not observables:
        raise ValueError("no observables requested")

    def operator(spec):
        site, axis = spec
        (idx,) = resolve_sites(system.labels, [site])
        return single_spin_operator(system, idx, axis), f"I{system.labels[idx]}{axis}"

    initial = _operator_specs(initial)
    parts = [operator(spec) for spec in initial]
    rho0 = sum(op for op, _ in parts)
    H = build_hamiltonian(system, convention)
    w, V = np.linalg.eigh(H)
    rho_eig = V.T @ rho0 @ V
    norm = np.real(np.trace(rho0 @ rho0))

    names, weights = [], []
    for spec in observables:
        O, name = operator(spec)
        names.append(name)
        weights.append((V.T @ O @ V).T * rho_eig)

    values = np.empty((times.size, len(weights)))
    for t_i, t in enumerate(times):
        phase = np.exp(-1j * w * t)
        for k, Mw in enumerate(weights):
            values[t_i, k] = np.real(phase @ Mw @ phase.conj()) / norm
    return CoherentTrajectory(
        times=times,
        values=values,
        names=tuple(names),
        metadata={"initial": "+".join(name for _, name in parts), "angular_factor": convention.angular_factor},
    )


def count_extrema(values):
    """Number of interior local extrema of a sampled curve."""
    d = np.diff(np.asarray(values, dtype=float))
    d = d[d != 0]
    return int(np.sum(np.sign(d[1:]) != np.sign(d[:-1])))


class ProjectedEvolution(TransformerMixin, BaseEstimator):
    """Forward model as a transformer: initial polarizations -> polarizations after ``n_cycles``.

    Parameters
    ----------
    couplings : array-like of shape (n_sites, n_sites)
        Symmetric coupling matrix in Hz.
    tau : float
        Cycle time in seconds.
    n_cycles : int
    fidelity : float
        Off-diagonal retention per projection.
    damping : float
        Uniform polarization decay rate in 1/s.
    angular_factor : float

    Attributes
    ----------
    kernel_ : TransferKernel
    n_features_in_ : int
    """

    def __init__(self, couplings, tau=0.01, n_cycles=1, fidelity=0.0, damping=0.0,
                 angular_factor=2.0 * np.pi):
        self.couplings = couplings
        self.tau = tau
        self.n_cycles = n_cycles
        self.fidelity = fidelity
        self.damping = damping
        self.angular_factor = angular_factor

    def fit(self, X=None, y=None):
        J = np.asarray(self.couplings, dtype=float)
        system = SpinSystem([str(i) for i in range(J.shape[0])], J)
        self.system_ = system
        self.projection_ = ProjectionSpec(self.fidelity, self.damping)
        check_n_cycles(self.n_cycles)
        self.kernel_ = kernel_for(system, self.tau, HamiltonianConvention(self.angular_factor))
        self.n_features_in_ = system.n
        return self

    def _run(self, X):
        check_is_fitted(self, "kernel_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} sites, got {X.shape[1]}")
        return [
            evolve_projected(self.kernel_, initial_population(self.system_, row), self.n_cycles,
                             self.projection_).values
            for row in X
        ]

    def transform(self, X):
        return np.vstack([v[-1] for v in self._run(X)])

    def trajectories(self, X):
        """Full trajectories, shape (n_samples, n_cycles + 1, n_sites)."""
        return np.stack(self._run(X))


__all__ = [
    "CoherentTrajectory",
    "PolarizationTrajectory",
    "PopulationState",
    "Preparation",
    "ProjectedEvolution",
    "ProjectionSpec",
    "Propagator",
    "TransferKernel",
    "count_extrema",
    "evolve_coherent",
    "evolve_projected",
    "initial_population",
    "kernel_for",
    "monotonicity_violations",
    "pinch",
    "product_populations",
    "propagator",
    "simulate_projected",
    "tau_sweep",
    "transfer_kernel",
]
