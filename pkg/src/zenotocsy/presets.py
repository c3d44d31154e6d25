"""Named spin systems."""

from .spin_core import build_spin_system

# Ring protons of pyridine: 1/1' ortho to N, 2/2' meta, 3 para.
# Literature couplings in Hz; the 1-1' and 2-2' couplings are not tabulated
# and default to zero.
PYRIDINE_COUPLINGS = {
    ("1", "2"): 4.86,
    ("1'", "2'"): 4.86,
    ("1", "2'"): 0.98,
    ("1'", "2"): 0.98,
    ("1", "3"): 1.85,
    ("1'", "3"): 1.85,
    ("2", "3"): 7.66,
    ("2'", "3"): 7.66,
}

# Effective (RMS) group couplings reported for simulated pyridine data,
# in the order {1,1'}-{2,2'}, {1,1'}-{3}, {2,2'}-{3}.
PYRIDINE_SIMULATED_EFFECTIVE = (3.50, 1.86, 7.64)
PYRIDINE_EXPERIMENTAL_EFFECTIVE = ((3.4, 0.1), (2.0, 0.2), (6.6, 0.9))


def pyridine(j_11=0.0, j_22=0.0):
    """Five-spin pyridine with equivalence groups {1,1'}, {2,2'}, {3}."""
    couplings = [(a, b, j) for (a, b), j in PYRIDINE_COUPLINGS.items()]
    if j_11:
        couplings.append(("1", "1'", j_11))
    if j_22:
        couplings.append(("2", "2'", j_22))
    return build_spin_system(
        ["1", "1'", "2", "2'", "3"],
        couplings,
        [["1", "1'"], ["2", "2'"], ["3"]],
    )


def two_spin(j=10.0):
    return build_spin_system(["A", "B"], [("A", "B", j)])


def chain(n, j=5.0):
    labels = [f"S{i}" for i in range(n)]
    return build_spin_system(labels, [(labels[i], labels[i + 1], j) for i in range(n - 1)])


PRESETS = {
    "pyridine": (pyridine, "pyridine ring protons, groups {1,1'}, {2,2'}, {3}"),
    "two-spin": (two_spin, "isolated pair A-B with J = 10 Hz"),
    "chain4": (lambda: chain(4), "linear 4-spin chain, nearest-neighbour J = 5 Hz"),
}


def get_preset(name):
    try:
        factory, _ = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
    return factory()
