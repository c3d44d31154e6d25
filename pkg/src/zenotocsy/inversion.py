"""Coupling-magnitude extraction from projected build-up curves.

Two routes:

* short-tau: over the early window of every group (before its change
  reaches a fraction of the equipartition value) the group sums obey the
  integrated small-tau rate equation, which is linear in the squared
  group couplings.  Solving that linear system gives root-mean-square
  couplings between equivalence groups.
* least squares: all |J| are refined against exact projected simulations.

Both are exposed as functions and as scikit-learn style estimators whose
``fit`` takes a :class:`BuildUpDataset`.
"""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import least_squares
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_polarizations, check_tau
from .approx import REFUSE_THRESHOLD, WARN_THRESHOLD, pair_rate_coefficient
from .dynamics import (
    PopulationState,
    Preparation,
    ProjectionSpec,
    evolve_projected,
    initial_population,
    product_populations,
    propagator,
    transfer_kernel,
)
from .spin_core import (
    DEFAULT_CONVENTION,
    HamiltonianConvention,
    SectorDecomposition,
    SpinSystem,
    group_name,
    sector_hamiltonians,
)

logger = logging.getLogger(__name__)

NOISY_WINDOW_SMOOTHING = 9


class UnidentifiableError(ValueError):
    """The experiments do not determine every requested coupling."""

    def __init__(self, pairs):
        self.pairs = list(pairs)
        super().__init__(
            "couplings not identifiable from the given experiments: "
            + ", ".join(f"{a}-{b}" for a, b in self.pairs)
        )


class RegimeError(ValueError):
    """Estimated |J| tau is too large for the short-tau law."""


class RefinementWarning(UserWarning):
    pass


def display_name(group):
    return group[0] if len(group) == 1 else group_name(group)


@dataclass(frozen=True, eq=False)
class Experiment:
    """One build-up measurement.

    ``values[m, k]`` is the observed polarization of ``columns[k]`` after
    ``m`` cycles; a column is either a site label or a group name such as
    ``{1,1'}`` (group columns hold the mean over members).
    """

    initial: np.ndarray
    tau: float
    values: np.ndarray
    columns: tuple
    preparation: Preparation = None
    noise: float = None
    name: str = ""

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] != len(self.columns):
            raise ValueError(f"values shape {values.shape} does not match {len(self.columns)} columns")
        if values.shape[0] < 3:
            raise ValueError("an experiment needs at least 2 cycles (M >= 2)")
        object.__setattr__(self, "tau", check_tau(self.tau, allow_zero=False))
        object.__setattr__(self, "initial", check_polarizations(self.initial, name="initial polarizations"))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "columns", tuple(str(c) for c in self.columns))

    @property
    def n_cycles(self):
        return self.values.shape[0] - 1


@dataclass(frozen=True, eq=False)
class BuildUpDataset:
    """Experiments on a common site universe with its equivalence groups."""

    labels: tuple
    groups: tuple
    experiments: tuple

    def __post_init__(self):
        labels = tuple(str(s) for s in self.labels)
        groups = tuple(tuple(str(s) for s in g) for g in self.groups)
        if sorted(s for g in groups for s in g) != sorted(labels):
            raise ValueError("groups must partition the site labels")
        experiments = tuple(self.experiments)
        if not experiments:
            raise ValueError("dataset contains no experiments")
        known = set(labels) | {group_name(g) for g in groups}
        for k, exp in enumerate(experiments):
            if exp.initial.size != len(labels):
                raise ValueError(f"experiment {k} prepares {exp.initial.size} sites, dataset has {len(labels)}")
            unknown = sorted(set(exp.columns) - known)
            if unknown:
                raise ValueError(f"experiment {k} has columns {unknown} outside the label set {sorted(known)}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "experiments", experiments)

    @classmethod
    def for_system(cls, system, experiments):
        return cls(system.labels, system.equivalence_groups, tuple(experiments))

    @property
    def n(self):
        return len(self.labels)

    @property
    def group_indices(self):
        return tuple(tuple(self.labels.index(s) for s in g) for g in self.groups)

    def observation_matrix(self, experiment):
        """Linear map from site polarizations to the experiment's columns."""
        O = np.zeros((len(experiment.columns), self.n))
        names = {group_name(g): idx for g, idx in zip(self.groups, self.group_indices)}
        for k, col in enumerate(experiment.columns):
            if col in self.labels:
                O[k, self.labels.index(col)] = 1.0
            else:
                idx = names[col]
                O[k, list(idx)] = 1.0 / len(idx)
        return O

    def group_sums(self, experiment):
        """Group-summed polarization series where the columns determine them."""
        out = {}
        cols = experiment.columns
        for gi, (g, idx) in enumerate(zip(self.groups, self.group_indices)):
            name = group_name(g)
            if name in cols:
                out[gi] = experiment.values[:, cols.index(name)] * len(idx)
            elif all(s in cols for s in g):
                out[gi] = sum(experiment.values[:, cols.index(s)] for s in g)
        return out

    def group_sum_noise(self, experiment, group):
        """Standard deviation of one group-sum sample given the experiment's column noise."""
        if not experiment.noise:
            return 0.0
        size = len(self.groups[group])
        if group_name(self.groups[group]) in experiment.columns:
            return experiment.noise * size
        return experiment.noise * np.sqrt(size)

    def with_experiments(self, experiments):
        return BuildUpDataset(self.labels, self.groups, tuple(experiments))


@dataclass(frozen=True, eq=False)
class CouplingEstimate:
    """|J| (Hz) between pairs of equivalence groups with standard errors."""

    pairs: tuple
    values: np.ndarray
    stderr: np.ndarray
    method: str
    groups: tuple
    damping: float = None
    damping_stderr: float = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        stderr = np.asarray(self.stderr, dtype=float)
        if np.any(values < 0) or np.any(stderr < 0):
            raise ValueError("coupling magnitudes and uncertainties must be non-negative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stderr", stderr)
        object.__setattr__(self, "pairs", tuple(tuple(p) for p in self.pairs))
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))

    @property
    def pair_labels(self):
        return tuple((display_name(self.groups[a]), display_name(self.groups[b])) for a, b in self.pairs)

    def get(self, a, b):
        """|J| between groups (or sites) named ``a`` and ``b``."""
        names = [display_name(g) for g in self.groups]
        ia, ib = sorted((names.index(str(a)), names.index(str(b))))
        return float(self.values[self.pairs.index((ia, ib))])

    def site_couplings(self, labels, fixed=None):
        """Site coupling matrix with every member pair of a group pair set to its estimate."""
        n = len(labels)
        J = np.zeros((n, n)) if fixed is None else np.array(fixed, dtype=float)
        idx = [[list(labels).index(s) for s in g] for g in self.groups]
        for (a, b), v in zip(self.pairs, self.values):
            for i in idx[a]:
                for j in idx[b]:
                    J[i, j] = J[j, i] = v
        return J

    def as_dict(self):
        out = {
            "method": self.method,
            "pairs": [
                {"a": a, "b": b, "J_Hz": float(v), "stderr_Hz": float(s)}
                for (a, b), v, s in zip(self.pair_labels, self.values, self.stderr)
            ],
        }
        if self.damping is not None:
            out["damping_per_s"] = float(self.damping)
            out["damping_stderr_per_s"] = float(self.damping_stderr or 0.0)
        return out


@dataclass(frozen=True)
class SlopeFit:
    experiment: int
    group: int
    group_name: str
    rate: float
    stderr: float
    n_window: int
    kind: str
    tau: float


def _preparation_by_group(dataset, experiment, k):
    P0 = experiment.initial
    out = []
    for g, idx in zip(dataset.groups, dataset.group_indices):
        vals = P0[list(idx)]
        if np.ptp(vals) > 1e-12:
            raise ValueError(
                f"experiment {k}: group {group_name(g)} is not uniformly prepared "
                f"({vals.tolist()}); group-level extraction needs uniform groups"
            )
        out.append(float(vals[0]))
    return np.array(out)


def _early_window(delta, target, fraction, smooth=1):
    """Last cycle index before |delta| first reaches ``fraction * |target|``.

    ``smooth`` > 1 detects the crossing on a moving average so single noisy
    samples do not end the window.
    """
    limit = fraction * abs(target)
    if smooth > 1:
        delta = uniform_filter1d(delta, size=smooth, mode="nearest")
    over = np.flatnonzero(np.abs(delta) >= limit)
    return (int(over[0]) - 1) if over.size else delta.size - 1


def _initial_rate(delta, window, degree):
    m = np.arange(1, window + 1, dtype=float)
    y = delta[1:window + 1]
    deg = max(1, min(degree, window - 1))
    A = np.column_stack([m ** d for d in range(1, deg + 1)])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    dof = window - deg
    if dof > 0:
        resid = y - A @ coef
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.pinv(A.T @ A)
        se = float(np.sqrt(max(cov[0, 0], 0.0)))
    else:
        se = 0.0
    return float(coef[0]), se


def shorttau_slopes(dataset, window_fraction=0.25, degree=2, min_cycles=3, noise_tolerance=5.0):
    """Per-cycle initial rates of every observed equivalence group.

    For each experiment and group the change of the group-summed polarization
    is fitted over the early window (cycles before it reaches
    ``window_fraction`` of its equipartition value) by a polynomial without
    constant term; the linear coefficient is the rate.

    Groups below the mean initial polarization are ``build_up`` rows (cross
    peaks); those above are ``decay`` rows (self peaks).
    """
    fits = []
    for k, exp in enumerate(dataset.experiments):
        P_group = _preparation_by_group(dataset, exp, k)
        eq = exp.initial.mean()
        for gi, series in dataset.group_sums(exp).items():
            size = len(dataset.groups[gi])
            target = size * (eq - P_group[gi])
            if abs(target) < 1e-12:
                continue
            delta = series - series[0]
            window = _early_window(delta, target, window_fraction, NOISY_WINDOW_SMOOTHING if exp.noise else 1)
            name = group_name(dataset.groups[gi])
            if window < min_cycles:
                raise ValueError(
                    f"experiment {k}, group {name}: only {window} cycles before the build-up "
                    f"reaches {window_fraction:.0%} of its asymptote (need {min_cycles}); use a smaller tau"
                )
            steps = np.sign(target) * np.diff(delta[:window + 1])
            tol = noise_tolerance * np.sqrt(2.0) * dataset.group_sum_noise(exp, gi) if exp.noise else 1e-9
            if np.any(steps < -tol):
                raise ValueError(
                    f"experiment {k}, group {name}: early data are not monotone "
                    f"(backstep {-steps.min():.3g} > tolerance {tol:.3g})"
                )
            rate, se = _initial_rate(delta, window, degree)
            fits.append(SlopeFit(
                experiment=k,
                group=gi,
                group_name=name,
                rate=rate,
                stderr=se,
                n_window=window,
                kind="build_up" if target > 0 else "decay",
                tau=exp.tau,
            ))
    return fits


def _generator_system(dataset, fits, convention):
    """Integrated small-tau rate equation of every fitted group.

    For group ``h`` and cycle ``m`` inside its early window,
    ``S_h(m) - S_h(0) = (c tau)^2 sum_o |h||o| y_ho (C_o(m) - C_h(m))`` where
    ``S`` is a group sum, ``C_g(m)`` the cumulative sum of the group mean
    over cycles ``0..m-1`` and ``y`` the mean squared coupling of a group
    pair.  Using the running polarizations rather than the initial ones
    keeps sequential relays through third groups out of the estimate.
    """
    n_groups = len(dataset.groups)
    pairs = [(a, b) for a in range(n_groups) for b in range(a + 1, n_groups)]
    sizes = np.array([len(g) for g in dataset.groups], dtype=float)
    c = pair_rate_coefficient(convention)
    rows, rhs, weights = [], [], []
    cumulative = {}
    for f in fits:
        exp = dataset.experiments[f.experiment]
        if f.experiment not in cumulative:
            sums = dataset.group_sums(exp)
            missing = [group_name(dataset.groups[g]) for g in range(n_groups) if g not in sums]
            if missing:
                raise ValueError(
                    f"experiment {f.experiment} does not observe groups {missing}; "
                    "short-tau extraction needs every group"
                )
            means = np.column_stack([sums[g] / sizes[g] for g in range(n_groups)])
            C = np.vstack([np.zeros(n_groups), np.cumsum(means, axis=0)[:-1]])
            cumulative[f.experiment] = (sums, C)
        sums, C = cumulative[f.experiment]
        h, w = f.group, f.n_window
        block = np.zeros((w, len(pairs)))
        for col, (a, b) in enumerate(pairs):
            if h not in (a, b):
                continue
            o = b if h == a else a
            block[:, col] = (c * f.tau) ** 2 * sizes[h] * sizes[o] * (C[1:w + 1, o] - C[1:w + 1, h])
        rows.append(block)
        rhs.append(sums[h][1:w + 1] - sums[h][0])
        sigma = dataset.group_sum_noise(exp, h) if exp.noise else 1.0
        weights.append(np.full(w, 1.0 / sigma))
    if not rows:
        return np.zeros((0, len(pairs))), np.zeros(0), np.zeros(0), pairs
    return np.vstack(rows), np.concatenate(rhs), np.concatenate(weights), pairs


def _unidentifiable(A, tol=1e-8):
    """Column indices not determined by the rows of ``A``."""
    if A.size == 0:
        return list(range(A.shape[1]))
    scale = np.linalg.norm(A, axis=0)
    # columns at round-off level relative to the best determined one carry no information
    dead = scale <= tol * scale.max() if scale.max() > 0 else np.ones(scale.shape, dtype=bool)
    As = A[:, ~dead] / scale[~dead]
    _, s, Vt = np.linalg.svd(As, full_matrices=True)
    rank = int(np.sum(s > tol * (s[0] if s.size else 1.0)))
    null = Vt[rank:]
    bad = np.flatnonzero(np.any(np.abs(null) > 1e-8, axis=0)) if null.size else []
    live = np.flatnonzero(~dead)
    return sorted(set(np.flatnonzero(dead).tolist()) | {int(live[i]) for i in bad})


def _solve_generator(A, b, w):
    Aw = A * w[:, None]
    bw = b * w
    y, *_ = np.linalg.lstsq(Aw, bw, rcond=None)
    resid = Aw @ y - bw
    dof = max(bw.size - y.size, 1)
    cov = np.linalg.pinv(Aw.T @ Aw) * float(resid @ resid) / dof
    return y, cov, float(np.linalg.norm(resid))


def _solve_route(dataset, fits, convention, route):
    if route == "build_up":
        use = [f for f in fits if f.kind == "build_up"]
    elif route == "decay":
        use = [f for f in fits if f.kind == "decay"]
    elif route == "all":
        use = list(fits)
    else:
        raise ValueError(f"route must be build_up, decay or all, got {route!r}")
    A, b, w, pairs = _generator_system(dataset, use, convention)
    bad = _unidentifiable(A)
    if bad:
        names = [(display_name(dataset.groups[pairs[i][0]]), display_name(dataset.groups[pairs[i][1]])) for i in bad]
        raise UnidentifiableError(names)
    y, cov, resid = _solve_generator(A, b, w)
    return y, cov, resid, pairs, use


def estimate_couplings_shorttau(dataset, route="build_up", convention=DEFAULT_CONVENTION,
                                warn_threshold=WARN_THRESHOLD, refuse_threshold=REFUSE_THRESHOLD,
                                **slope_options):
    """Group-level |J| from the early build-up under the small-tau rate law.

    Early windows and row kinds come from :func:`shorttau_slopes`; every
    windowed cycle contributes one row of the integrated rate equation.
    ``route`` selects which rows enter the solve: cross-peak ``build_up``
    rows (default), self-peak ``decay`` rows, or ``all``.  When the decay
    rows alone are solvable their estimate is reported in
    ``diagnostics['decay_route']`` as a consistency check.
    """
    fits = shorttau_slopes(dataset, **slope_options)
    y, cov, resid, pairs, used = _solve_route(dataset, fits, convention, route)

    clipped = [i for i, v in enumerate(y) if v < 0]
    y = np.clip(y, 0.0, None)
    J = np.sqrt(y)
    se_y = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        se_J = np.where(J > 0, se_y / (2.0 * J), np.sqrt(se_y))

    tau_max = max(exp.tau for exp in dataset.experiments)
    jt = float(J.max() * tau_max) if J.size else 0.0
    if jt > refuse_threshold:
        raise RegimeError(
            f"estimated |J| tau = {jt:.3g} exceeds {refuse_threshold}; repeat with a smaller tau"
        )
    if jt > warn_threshold:
        warnings.warn(f"estimated |J| tau = {jt:.3g} > {warn_threshold}; consider a smaller tau",
                      RuntimeWarning, stacklevel=2)

    diagnostics = {
        "route": route,
        "residual_norm": resid,
        "rows": len(used),
        "cycles_used": [f.n_window for f in used],
        "clipped_pairs": clipped,
        "max_j_tau": jt,
    }
    if route != "decay":
        try:
            yd, *_ = _solve_route(dataset, fits, convention, "decay")
            diagnostics["decay_route"] = np.sqrt(np.clip(yd, 0.0, None)).tolist()
        except UnidentifiableError:
            diagnostics["decay_route"] = None
    return CouplingEstimate(
        pairs=pairs,
        values=J,
        stderr=se_J,
        method="short_tau_ratio",
        groups=dataset.groups,
        diagnostics=diagnostics,
    )


class _ForwardModel:
    """Exact projected simulations of a dataset, linear in the coupling parameters."""

    def __init__(self, dataset, pairs, fixed=None, convention=DEFAULT_CONVENTION, fidelity=0.0):
        self.dataset = dataset
        self.pairs = list(pairs)
        self.convention = convention
        self.fidelity = fidelity
        n = dataset.n
        idx = dataset.group_indices
        labels = dataset.labels
        self.unit_blocks = []
        for a, b in self.pairs:
            Jk = np.zeros((n, n))
            for i in idx[a]:
                for j in idx[b]:
                    Jk[i, j] = Jk[j, i] = 1.0
            self.unit_blocks.append(sector_hamiltonians(SpinSystem(labels, Jk), convention))
        fixed = np.zeros((n, n)) if fixed is None else np.asarray(fixed, dtype=float)
        self.fixed = sector_hamiltonians(SpinSystem(labels, fixed), convention)
        self.observations = [dataset.observation_matrix(e) for e in dataset.experiments]
        self.initial = [PopulationState(product_populations(e.initial)) for e in dataset.experiments]

    def sectors(self, values):
        blocks = [blk.copy() for blk in self.fixed.blocks]
        for v, unit in zip(values, self.unit_blocks):
            for blk, u in zip(blocks, unit.blocks):
                blk += v * u
        f = self.fixed
        return SectorDecomposition(f.n, f.twice_mz, f.indices, tuple(blocks), self.convention)

    def simulate(self, values, damping=0.0):
        sectors = self.sectors(values)
        projection = ProjectionSpec(self.fidelity, max(float(damping), 0.0))
        kernels = {}
        out = []
        for exp, O, p0 in zip(self.dataset.experiments, self.observations, self.initial):
            if exp.tau not in kernels:
                kernels[exp.tau] = transfer_kernel(propagator(sectors, exp.tau))
            traj = evolve_projected(kernels[exp.tau], p0, exp.n_cycles, projection)
            out.append(traj.values @ O.T)
        return out


def _residuals(model, dataset, values, damping):
    sims = model.simulate(values, damping)
    parts = []
    for exp, sim in zip(dataset.experiments, sims):
        r = (sim[1:] - exp.values[1:]).ravel()
        parts.append(r / exp.noise if exp.noise else r)
    return np.concatenate(parts)


def refine_fit(dataset, initial, fit_damping=False, damping=0.0, fixed_couplings=None,
               convention=DEFAULT_CONVENTION, fidelity=0.0, max_nfev=200, tol=1e-12):
    """Least-squares refinement of |J| (and optionally damping) on exact simulations.

    Every member pair of a group pair shares one parameter; couplings within
    groups are held at ``fixed_couplings`` (zero by default).  Uses a
    bounded trust-region solver with forward-difference sensitivities.
    Non-convergence or parameters at the zero bound are reported through
    :class:`RefinementWarning` and ``diagnostics``; the best point found is
    returned.
    """
    pairs = list(initial.pairs)
    model = _ForwardModel(dataset, pairs, fixed_couplings, convention, fidelity)
    x0 = np.array(initial.values, dtype=float)
    scale = max(float(x0.max()) if x0.size else 1.0, 1e-3)
    x0 = np.maximum(x0, 1e-3 * scale)
    if fit_damping:
        x0 = np.append(x0, max(float(damping), 1e-3))

    def fun(x):
        if fit_damping:
            return _residuals(model, dataset, x[:-1], x[-1])
        return _residuals(model, dataset, x, damping)

    res = least_squares(fun, x0, bounds=(0.0, np.inf), method="trf", x_scale="jac",
                        ftol=tol, xtol=tol, gtol=tol, max_nfev=max_nfev)
    x = res.x
    n_obs, n_par = res.fun.size, x.size
    dof = max(n_obs - n_par, 1)
    s2 = 2.0 * res.cost / dof
    known_noise = all(e.noise for e in dataset.experiments)
    cov = np.linalg.pinv(res.jac.T @ res.jac) * (1.0 if known_noise else s2)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))

    # residuals depend on J^2, so the gradient vanishes at zero and the bound is approached, not hit
    floor = 1e-6 * max(float(np.max(x)), 1e-12)
    at_bound = [i for i in range(n_par) if res.active_mask[i] != 0 or x[i] <= floor]
    converged = res.status > 0
    if not converged:
        warnings.warn(f"refinement did not converge after {res.nfev} evaluations: {res.message}",
                      RefinementWarning, stacklevel=2)
    if at_bound:
        warnings.warn(f"parameters {at_bound} are at the non-negativity bound", RefinementWarning, stacklevel=2)

    n_pairs = len(pairs)
    return CouplingEstimate(
        pairs=pairs,
        values=x[:n_pairs],
        stderr=se[:n_pairs],
        method="least_squares",
        groups=dataset.groups,
        damping=float(x[-1]) if fit_damping else (float(damping) if damping else None),
        damping_stderr=float(se[-1]) if fit_damping else None,
        diagnostics={
            "residual_norm": float(np.linalg.norm(res.fun)),
            "converged": bool(converged),
            "at_bound": at_bound,
            "nfev": int(res.nfev),
            "message": res.message,
            "cycles_used": [e.n_cycles for e in dataset.experiments],
            "fixed_couplings": None if fixed_couplings is None else np.asarray(fixed_couplings).tolist(),
        },
    )


@dataclass(frozen=True, eq=False)
class BootstrapReport:
    pair_labels: tuple
    stderr: np.ndarray
    replicates: np.ndarray
    seed: int
    method: str
    damping_stderr: float = None

    def as_dict(self):
        out = {
            "method": self.method,
            "seed": self.seed,
            "n_replicates": int(self.replicates.shape[0]),
            "stderr_Hz": {f"{a}-{b}": float(s) for (a, b), s in zip(self.pair_labels, self.stderr)},
        }
        if self.damping_stderr is not None:
            out["damping_stderr_per_s"] = self.damping_stderr
        return out


def bootstrap_uncertainty(dataset, estimate, replicates=100, seed=0, fixed_couplings=None,
                          convention=DEFAULT_CONVENTION, **fit_options):
    """Residual-bootstrap standard errors of ``estimate``.

    Residuals of the data against the forward model at ``estimate`` are
    resampled with replacement within each experiment, added back to the
    model curves and re-fitted with the estimate's own method.
    """
    if replicates < 10:
        raise ValueError(f"need at least 10 bootstrap replicates, got {replicates}")
    for k, exp in enumerate(dataset.experiments):
        if exp.n_cycles < 3:
            raise ValueError(f"experiment {k} has too few cycles ({exp.n_cycles}) to resample")
    model = _ForwardModel(dataset, estimate.pairs, fixed_couplings, convention)
    fitted = model.simulate(estimate.values, estimate.damping or 0.0)
    residuals = [exp.values[1:] - sim[1:] for exp, sim in zip(dataset.experiments, fitted)]

    rng = np.random.default_rng(seed)
    draws, damp_draws = [], []
    for _ in range(replicates):
        experiments = []
        for exp, sim, res in zip(dataset.experiments, fitted, residuals):
            pick = rng.integers(0, res.shape[0], size=res.shape[0])
            values = np.vstack([exp.values[:1], sim[1:] + res[pick]])
            experiments.append(Experiment(exp.initial, exp.tau, values, exp.columns,
                                          exp.preparation, exp.noise, exp.name))
        resampled = dataset.with_experiments(experiments)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RefinementWarning)
            warnings.simplefilter("ignore", RuntimeWarning)
            if estimate.method == "least_squares":
                fit = refine_fit(resampled, estimate, fit_damping=estimate.damping_stderr is not None,
                                 damping=estimate.damping or 0.0, fixed_couplings=fixed_couplings,
                                 convention=convention, **fit_options)
            else:
                fit = estimate_couplings_shorttau(resampled, convention=convention, **fit_options)
        draws.append(fit.values)
        if fit.damping is not None and estimate.damping_stderr is not None:
            damp_draws.append(fit.damping)
    draws = np.array(draws)
    return BootstrapReport(
        pair_labels=estimate.pair_labels,
        stderr=draws.std(axis=0, ddof=1),
        replicates=draws,
        seed=seed,
        method=estimate.method,
        damping_stderr=float(np.std(damp_draws, ddof=1)) if damp_draws else None,
    )


def simulate_dataset(system, runs, columns="sites", projection=None, noise=None, seed=0,
                     convention=DEFAULT_CONVENTION):
    """Synthetic :class:`BuildUpDataset` from exact projected simulations.

    ``runs`` is a sequence of ``(preparation, tau, n_cycles)``.  ``columns``
    is ``"sites"``, ``"groups"`` or ``"both"``.  Gaussian noise of standard
    deviation ``noise`` is added to every cycle after the first.
    """
    rng = np.random.default_rng(seed)
    sectors = sector_hamiltonians(system, convention)
    experiments = []
    for k, (prep, tau, n_cycles) in enumerate(runs):
        kernel = transfer_kernel(propagator(sectors, check_tau(tau, allow_zero=False)))
        traj = evolve_projected(kernel, initial_population(system, prep), n_cycles, projection, system=system)
        if columns == "sites":
            values, cols = traj.values, traj.labels
        elif columns == "groups":
            values, cols = traj.group_values, traj.group_names
        elif columns == "both":
            values = np.hstack([traj.values, traj.group_values])
            cols = traj.labels + traj.group_names
        else:
            raise ValueError(f"columns must be sites, groups or both, got {columns!r}")
        values = values.copy()
        if noise:
            values[1:] += rng.normal(0.0, noise, size=values[1:].shape)
        initial = prep.polarizations(system) if isinstance(prep, Preparation) else np.asarray(prep, float)
        experiments.append(Experiment(
            initial=initial,
            tau=tau,
            values=values,
            columns=cols,
            preparation=prep if isinstance(prep, Preparation) else None,
            noise=noise,
            name=prep.describe() if isinstance(prep, Preparation) else f"run{k}",
        ))
    return BuildUpDataset.for_system(system, experiments)


def _check_dataset(X):
    if not isinstance(X, BuildUpDataset):
        raise TypeError(f"expected a BuildUpDataset, got {type(X).__name__}")
    return X


class _CouplingEstimatorBase(BaseEstimator):

    def predict(self, X):
        """Forward-simulated columns of every experiment in ``X`` at the fitted couplings."""
        check_is_fitted(self, "estimate_")
        X = _check_dataset(X)
        model = _ForwardModel(X, self.estimate_.pairs, getattr(self, "fixed_couplings", None),
                              self._convention())
        return model.simulate(self.estimate_.values, self.estimate_.damping or 0.0)

    def score(self, X, y=None):
        """Negative root-mean-square residual over all cycles after the first."""
        sims = self.predict(X)
        r = np.concatenate([(s[1:] - e.values[1:]).ravel() for s, e in zip(sims, X.experiments)])
        return -float(np.sqrt(np.mean(r ** 2)))

    def _convention(self):
        return HamiltonianConvention(self.angular_factor)

    @property
    def couplings_(self):
        check_is_fitted(self, "estimate_")
        return {f"{a}-{b}": float(v) for (a, b), v in zip(self.estimate_.pair_labels, self.estimate_.values)}


class ShortTauCouplingEstimator(_CouplingEstimatorBase):
    """Group-level |J| from short-tau initial rates.

    Parameters
    ----------
    route : {"build_up", "decay", "all"}
    window_fraction : float
        Early window ends when a group's change reaches this fraction of its
        equipartition value.
    degree : int
        Polynomial degree of the initial-rate fit.
    min_cycles : int
    angular_factor : float

    Attributes
    ----------
    estimate_ : CouplingEstimate
    slopes_ : list of SlopeFit
    """

    def __init__(self, route="build_up", window_fraction=0.25, degree=2, min_cycles=3,
                 angular_factor=2.0 * np.pi):
        self.route = route
        self.window_fraction = window_fraction
        self.degree = degree
        self.min_cycles = min_cycles
        self.angular_factor = angular_factor

    def fit(self, X, y=None):
        X = _check_dataset(X)
        opts = dict(window_fraction=self.window_fraction, degree=self.degree, min_cycles=self.min_cycles)
        self.slopes_ = shorttau_slopes(X, **opts)
        self.estimate_ = estimate_couplings_shorttau(X, route=self.route, convention=self._convention(), **opts)
        return self


class LeastSquaresCouplingEstimator(_CouplingEstimatorBase):
    """|J| refined against exact projected simulations.

    Parameters
    ----------
    initial : CouplingEstimate or None
        Starting point; ``None`` runs the short-tau route first.
    fit_damping : bool
    damping : float
        Starting (or fixed) damping rate in 1/s.
    fixed_couplings : array-like or None
        Site couplings kept fixed (only within-group entries are used).
    max_nfev : int
    angular_factor : float
    """

    def __init__(self, initial=None, fit_damping=False, damping=0.0, fixed_couplings=None,
                 max_nfev=200, angular_factor=2.0 * np.pi):
        self.initial = initial
        self.fit_damping = fit_damping
        self.damping = damping
        self.fixed_couplings = fixed_couplings
        self.max_nfev = max_nfev
        self.angular_factor = angular_factor

    def fit(self, X, y=None):
        X = _check_dataset(X)
        start = self.initial
        if start is None:
            start = estimate_couplings_shorttau(X, convention=self._convention())
        self.initial_estimate_ = start
        self.estimate_ = refine_fit(X, start, fit_damping=self.fit_damping, damping=self.damping,
                                    fixed_couplings=self.fixed_couplings, convention=self._convention(),
                                    max_nfev=self.max_nfev)
        return self


__all__ = [
    "BootstrapReport",
    "BuildUpDataset",
    "CouplingEstimate",
    "Experiment",
    "LeastSquaresCouplingEstimator",
    "RefinementWarning",
    "RegimeError",
    "ShortTauCouplingEstimator",
    "SlopeFit",
    "UnidentifiableError",
    "bootstrap_uncertainty",
    "estimate_couplings_shorttau",
    "refine_fit",
    "shorttau_slopes",
    "simulate_dataset",
]
