"""Input validation helpers shared by the public API and the estimators."""

import numbers

import numpy as np

MAX_SPINS = 16


def check_n_spins(n):
    if not isinstance(n, numbers.Integral) or n < 1:
        raise ValueError(f"spin count must be a positive integer, got {n!r}")
    if n > MAX_SPINS:
        raise ValueError(
            f"{n} spins requested; dense simulation is limited to {MAX_SPINS} "
            f"(2^{n} = {2 ** n} basis states)"
        )
    return int(n)


def check_tau(tau, name="tau", allow_zero=True):
    """Return ``tau`` as a float, rejecting negative or non-finite values."""
    tau = float(tau)
    if not np.isfinite(tau):
        raise ValueError(f"{name} must be finite, got {tau}")
    if tau < 0 or (tau == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValueError(f"{name} must be {bound}, got {tau}")
    return tau


def check_n_cycles(n_cycles, max_cycles=100_000):
    if not isinstance(n_cycles, numbers.Integral) or n_cycles < 0:
        raise ValueError(f"number of cycles must be a non-negative integer, got {n_cycles!r}")
    if n_cycles > max_cycles:
        raise ValueError(f"{n_cycles} cycles exceeds the configured cap of {max_cycles}")
    return int(n_cycles)


def check_fraction(value, name):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_polarizations(values, n=None, name="polarizations"):
    """Validate a vector of per-site polarizations in [-1, 1]."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {values.shape}")
    if n is not None and values.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {values.shape[0]}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} contains non-finite entries")
    if np.any(np.abs(values) > 1.0):
        bad = np.flatnonzero(np.abs(values) > 1.0).tolist()
        raise ValueError(f"{name} must lie in [-1, 1]; offending sites {bad}")
    return values


def check_coupling_matrix(couplings):
    """Return a float copy of a symmetric coupling matrix with zero diagonal."""
    J = np.array(couplings, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError(f"coupling matrix must be square, got shape {J.shape}")
    if not np.all(np.isfinite(J)):
        raise ValueError("coupling matrix contains non-finite entries")
    if np.any(np.diag(J) != 0):
        raise ValueError("coupling matrix must have a zero diagonal (no self-coupling)")
    if not np.array_equal(J, J.T):
        raise ValueError("coupling matrix must be exactly symmetric")
    return J


def check_hermitian(rho, atol=1e-9):
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"density matrix must be square, got shape {rho.shape}")
    dev = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
    if dev > atol:
        raise ValueError(f"density matrix is not Hermitian (max deviation {dev:.3g})")
    return rho


def resolve_sites(labels, sites):
    """Map a collection of site labels or integer indices to sorted indices."""
    labels = list(labels)
    out = []
    for s in sites:
        if isinstance(s, numbers.Integral) and not isinstance(s, bool):
            if not 0 <= s < len(labels):
                raise ValueError(f"site index {s} out of range for {len(labels)} sites")
            out.append(int(s))
        else:
            try:
                out.append(labels.index(str(s)))
            except ValueError:
                raise ValueError(f"unknown site label {s!r}; known labels {labels}") from None
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate sites in {list(sites)}")
    return sorted(out)
