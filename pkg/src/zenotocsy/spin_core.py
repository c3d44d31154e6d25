"""Product-basis representation of an exchange-coupled spin-1/2 network.

Basis convention: the product basis is the Kronecker ordering of the sites,
so site 0 is the most significant bit of a basis index.  For a basis index
``b`` the state of site ``i`` is ``(b >> (n - 1 - i)) & 1`` with 0 meaning
m = +1/2 (alpha) and 1 meaning m = -1/2 (beta).

Couplings are tabulated in Hz.  The Hamiltonian is

    H = angular_factor * sum_{i<j} J_ij (Ix_i Ix_j + Iy_i Iy_j + Iz_i Iz_j)

in rad/s, with ``angular_factor = 2*pi`` by default, so that two spins
exchange their polarization completely after 1 / (2 J).
"""

from dataclasses import dataclass, field
from functools import cached_property
from math import comb

import numpy as np

from ._validation import MAX_SPINS, check_coupling_matrix, check_n_spins

DEFAULT_ANGULAR_FACTOR = 2.0 * np.pi

_PAULI_HALF = {
    "x": np.array([[0.0, 0.5], [0.5, 0.0]], dtype=complex),
    "y": np.array([[0.0, -0.5j], [0.5j, 0.0]], dtype=complex),
    "z": np.array([[0.5, 0.0], [0.0, -0.5]], dtype=complex),
}


@dataclass(frozen=True)
class HamiltonianConvention:
    """Conversion between tabulated couplings (Hz) and angular couplings (rad/s)."""

    angular_factor: float = DEFAULT_ANGULAR_FACTOR

    def __post_init__(self):
        if not np.isfinite(self.angular_factor) or self.angular_factor <= 0:
            raise ValueError(f"angular_factor must be positive, got {self.angular_factor}")

    def as_dict(self):
        return {"angular_factor": float(self.angular_factor)}


DEFAULT_CONVENTION = HamiltonianConvention()


@dataclass(frozen=True, eq=False)
class SpinSystem:
    """An N-site spin-1/2 network with symmetric scalar couplings in Hz.

    Equivalence groups only matter for reporting (group-aggregated signals
    and group-level coupling estimates); the dynamics use site couplings.
    """

    labels: tuple
    couplings: np.ndarray
    equivalence_groups: tuple = None

    def __post_init__(self):
        labels = tuple(str(lab) for lab in self.labels)
        n = check_n_spins(len(labels))
        if len(set(labels)) != n:
            raise ValueError(f"site labels must be unique, got {labels}")
        J = check_coupling_matrix(self.couplings)
        if J.shape != (n, n):
            raise ValueError(f"coupling matrix shape {J.shape} does not match {n} labels")
        J.setflags(write=False)

        groups = self.equivalence_groups
        if groups is None:
            groups = [[lab] for lab in labels]
        groups = tuple(tuple(str(s) for s in g) for g in groups)
        seen = [s for g in groups for s in g]
        if any(len(g) == 0 for g in groups):
            raise ValueError("equivalence groups must be non-empty")
        unknown = sorted(set(seen) - set(labels))
        if unknown:
            raise ValueError(f"equivalence groups name unknown sites {unknown}")
        if sorted(seen) != sorted(labels):
            missing = sorted(set(labels) - set(seen))
            raise ValueError(
                f"every site must appear in exactly one equivalence group "
                f"(missing {missing}, duplicated {sorted({s for s in seen if seen.count(s) > 1})})"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "couplings", J)
        object.__setattr__(self, "equivalence_groups", groups)

    @property
    def n(self):
        return len(self.labels)

    @property
    def group_indices(self):
        return tuple(tuple(self.labels.index(s) for s in g) for g in self.equivalence_groups)

    @property
    def group_names(self):
        return tuple(group_name(g) for g in self.equivalence_groups)

    def index(self, label):
        return self.labels.index(str(label))

    def coupling(self, a, b):
        return float(self.couplings[self.index(a), self.index(b)])

    def with_couplings(self, couplings):
        return SpinSystem(self.labels, couplings, self.equivalence_groups)

    def permuted(self, order):
        """Return the same physical system with sites listed in ``order``."""
        order = list(order)
        if sorted(order) != list(range(self.n)):
            raise ValueError(f"{order} is not a permutation of range({self.n})")
        J = self.couplings[np.ix_(order, order)]
        return SpinSystem([self.labels[i] for i in order], J, self.equivalence_groups)

    def is_connected(self):
        J = self.couplings != 0
        reached = {0}
        frontier = [0]
        while frontier:
            i = frontier.pop()
            for j in np.flatnonzero(J[i]):
                if j not in reached:
                    reached.add(int(j))
                    frontier.append(int(j))
        return len(reached) == self.n

    def coupling_list(self):
        """Non-zero couplings as (label_a, label_b, J_Hz) with a before b."""
        out = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                if self.couplings[i, j] != 0:
                    out.append((self.labels[i], self.labels[j], float(self.couplings[i, j])))
        return out

    def __repr__(self):
        return f"SpinSystem(labels={self.labels!r}, n_couplings={len(self.coupling_list())})"


def group_name(members):
    """Canonical display name of an equivalence group, e.g. ``{1,1'}``."""
    return "{" + ",".join(members) + "}"


def build_spin_system(labels, coupling_list, equivalence_groups=None):
    """Build a :class:`SpinSystem` from ``(site_a, site_b, J_Hz)`` triplets.

    Pairs that are not listed have zero coupling.  Listing a pair twice is
    allowed only if both entries carry the same value.
    """
    labels = [str(lab) for lab in labels]
    n = check_n_spins(len(labels))
    if len(set(labels)) != n:
        raise ValueError(f"site labels must be unique, got {labels}")
    J = np.zeros((n, n))
    assigned = {}
    for entry in coupling_list:
        try:
            a, b, value = entry
        except (TypeError, ValueError):
            raise ValueError(f"coupling entries must be (site_a, site_b, J_Hz), got {entry!r}") from None
        a, b = str(a), str(b)
        for s in (a, b):
            if s not in labels:
                raise ValueError(f"coupling {entry!r} names unknown site {s!r}")
        if a == b:
            raise ValueError(f"self-coupling entry {entry!r} is not allowed")
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f"coupling {entry!r} is not finite")
        i, j = sorted((labels.index(a), labels.index(b)))
        if (i, j) in assigned and assigned[(i, j)] != value:
            raise ValueError(
                f"conflicting couplings for pair ({labels[i]}, {labels[j]}): "
                f"{assigned[(i, j)]} and {value}"
            )
        assigned[(i, j)] = value
        J[i, j] = J[j, i] = value
    return SpinSystem(labels, J, equivalence_groups)


def basis_bits(n):
    """Array of shape (2**n, n) with the spin-down indicator of every site."""
    n = check_n_spins(n)
    idx = np.arange(2 ** n)
    shifts = n - 1 - np.arange(n)
    return (idx[:, None] >> shifts) & 1


def polarization_signs(n):
    """Matrix of shape (n, 2**n) whose rows give 2*<Iz_i> for each basis state."""
    return (1 - 2 * basis_bits(n)).T.astype(float)


def single_spin_operator(system, site, axis):
    """Spin-1/2 operator of ``site`` along ``axis`` embedded in the full product space.

    ``system`` may be a :class:`SpinSystem` or a plain spin count.
    """
    n = system.n if isinstance(system, SpinSystem) else check_n_spins(system)
    if not 0 <= int(site) < n:
        raise ValueError(f"site {site} out of range for {n} spins")
    try:
        local = _PAULI_HALF[axis]
    except KeyError:
        raise ValueError(f"axis must be one of 'x', 'y', 'z', got {axis!r}") from None
    # identity factors on either side of the site keep the Kronecker ordering
    left = np.eye(2 ** int(site))
    right = np.eye(2 ** (n - int(site) - 1))
    return np.kron(np.kron(left, local), right)


def total_sz(n):
    """Diagonal of the total Iz operator in the product basis."""
    return 0.5 * polarization_signs(n).sum(axis=0)


def _hamiltonian_terms(J, bits):
    """Diagonal energies and flip-flop partners for the states in ``bits``.

    Returns (diag, pair_terms) with ``pair_terms`` a list of
    (state_positions, flip_mask, amplitude).
    """
    n = J.shape[0]
    signs = 1 - 2 * bits
    diag = np.zeros(bits.shape[0])
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            if J[i, j] == 0:
                continue
            diag += 0.25 * J[i, j] * signs[:, i] * signs[:, j]
            differ = np.flatnonzero(bits[:, i] != bits[:, j])
            mask = (1 << (n - 1 - i)) | (1 << (n - 1 - j))
            terms.append((differ, mask, 0.5 * J[i, j]))
    return diag, terms


def _angular_couplings(system, convention):
    with np.errstate(over="ignore", invalid="ignore"):
        J = convention.angular_factor * system.couplings
    if not np.all(np.isfinite(J)):
        raise np.linalg.LinAlgError("angular couplings overflow; coupling magnitudes are too large")
    return J


def build_hamiltonian(system, convention=DEFAULT_CONVENTION):
    """Dense isotropic exchange Hamiltonian in rad/s (real symmetric)."""
    n = system.n
    J = _angular_couplings(system, convention)
    bits = basis_bits(n)
    diag, terms = _hamiltonian_terms(J, bits)
    H = np.diag(diag)
    for rows, mask, amp in terms:
        H[rows, rows ^ mask] = amp
    return H


@dataclass(frozen=True, eq=False)
class SectorDecomposition:
    """Hamiltonian blocks for each total-Mz sector.

    ``twice_mz[k]`` is 2*Mz of sector ``k`` (i.e. Mz in units of 1/2) and
    ``indices[k]`` the sorted product-basis indices spanning it.
    """

    n: int
    twice_mz: tuple
    indices: tuple
    blocks: tuple
    convention: HamiltonianConvention = field(default=DEFAULT_CONVENTION)

    @property
    def dim(self):
        return 2 ** self.n

    @property
    def sizes(self):
        return tuple(len(ix) for ix in self.indices)

    @cached_property
    def eigh(self):
        """Per-sector ``(eigenvalues, eigenvectors)``, computed once."""
        out = []
        for blk in self.blocks:
            try:
                out.append(np.linalg.eigh(blk))
            except np.linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"sector eigendecomposition failed: {exc}") from exc
        return tuple(out)

    def assemble(self):
        """Reassemble the full 2^n x 2^n Hamiltonian."""
        H = np.zeros((self.dim, self.dim))
        for ix, blk in zip(self.indices, self.blocks):
            H[np.ix_(ix, ix)] = blk
        return H

    def eigenvalues(self):
        return np.sort(np.concatenate([w for w, _ in self.eigh]))


def _sector_indices(n):
    down = basis_bits(n).sum(axis=1)
    return [np.flatnonzero(down == k) for k in range(n + 1)]


def sector_decompose(system, H, convention=DEFAULT_CONVENTION):
    """Split ``H`` into total-Mz blocks, verifying that it has no off-block entries."""
    n = system.n
    H = np.asarray(H)
    if H.shape != (2 ** n, 2 ** n):
        raise ValueError(f"Hamiltonian shape {H.shape} does not match {n} spins")
    indices = _sector_indices(n)
    label = np.empty(2 ** n, dtype=int)
    for k, ix in enumerate(indices):
        label[ix] = k
    off_block = label[:, None] != label[None, :]
    if np.any(H[off_block] != 0):
        worst = np.max(np.abs(H[off_block]))
        raise ValueError(f"Hamiltonian couples different Mz sectors (max entry {worst:.3g}); it is corrupted")
    blocks = tuple(np.ascontiguousarray(H[np.ix_(ix, ix)]) for ix in indices)
    return SectorDecomposition(
        n=n,
        twice_mz=tuple(n - 2 * k for k in range(n + 1)),
        indices=tuple(indices),
        blocks=blocks,
        convention=convention,
    )


def sector_hamiltonians(system, convention=DEFAULT_CONVENTION):
    """Build the sector blocks directly, without forming the full Hamiltonian.

    Equivalent to ``sector_decompose(system, build_hamiltonian(system))`` but
    needs memory only for the largest block.
    """
    n = system.n
    J = _angular_couplings(system, convention)
    all_bits = basis_bits(n)
    indices = _sector_indices(n)
    position = np.empty(2 ** n, dtype=int)
    blocks = []
    for ix in indices:
        position[ix] = np.arange(len(ix))
        diag, terms = _hamiltonian_terms(J, all_bits[ix])
        blk = np.diag(diag)
        for rows, mask, amp in terms:
            blk[rows, position[ix[rows] ^ mask]] = amp
        blocks.append(blk)
    return SectorDecomposition(
        n=n,
        twice_mz=tuple(n - 2 * k for k in range(n + 1)),
        indices=tuple(indices),
        blocks=tuple(blocks),
        convention=convention,
    )


def sector_sizes(n):
    return [comb(n, k) for k in range(n + 1)]


__all__ = [
    "DEFAULT_CONVENTION",
    "HamiltonianConvention",
    "MAX_SPINS",
    "SectorDecomposition",
    "SpinSystem",
    "basis_bits",
    "build_hamiltonian",
    "build_spin_system",
    "group_name",
    "polarization_signs",
    "sector_decompose",
    "sector_hamiltonians",
    "sector_sizes",
    "single_spin_operator",
    "total_sz",
]
