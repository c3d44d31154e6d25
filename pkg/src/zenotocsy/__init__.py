"""Projected exchange-coupled spin dynamics and coupling extraction from build-up curves."""

__version__ = "0.1.0"

from .approx import (
    EquilibriumPrediction,
    SmallTauModel,
    equilibrium_prediction,
    exact_site_kernel,
    small_tau_kernel,
    two_spin_transfer,
)
from .dynamics import (
    PolarizationTrajectory,
    PopulationState,
    Preparation,
    ProjectedEvolution,
    ProjectionSpec,
    TransferKernel,
    evolve_coherent,
    evolve_projected,
    initial_population,
    kernel_for,
    pinch,
    propagator,
    simulate_projected,
    tau_sweep,
    transfer_kernel,
)
from .inversion import (
    BuildUpDataset,
    CouplingEstimate,
    Experiment,
    LeastSquaresCouplingEstimator,
    ShortTauCouplingEstimator,
    bootstrap_uncertainty,
    estimate_couplings_shorttau,
    refine_fit,
    shorttau_slopes,
    simulate_dataset,
)
from .presets import pyridine
from .spin_core import (
    HamiltonianConvention,
    SectorDecomposition,
    SpinSystem,
    build_hamiltonian,
    build_spin_system,
    sector_decompose,
    sector_hamiltonians,
    single_spin_operator,
)

__all__ = [
    "bootstrap_uncertainty",
    "build_hamiltonian",
    "build_spin_system",
    "BuildUpDataset",
    "CouplingEstimate",
    "equilibrium_prediction",
    "EquilibriumPrediction",
    "estimate_couplings_shorttau",
    "evolve_coherent",
    "evolve_projected",
    "exact_site_kernel",
    "Experiment",
    "HamiltonianConvention",
    "initial_population",
    "kernel_for",
    "LeastSquaresCouplingEstimator",
    "pinch",
    "PolarizationTrajectory",
    "PopulationState",
    "Preparation",
    "ProjectedEvolution",
    "ProjectionSpec",
    "propagator",
    "pyridine",
    "refine_fit",
    "sector_decompose",
    "sector_hamiltonians",
    "SectorDecomposition",
    "shorttau_slopes",
    "ShortTauCouplingEstimator",
    "simulate_dataset",
    "simulate_projected",
    "single_spin_operator",
    "small_tau_kernel",
    "SmallTauModel",
    "SpinSystem",
    "tau_sweep",
    "transfer_kernel",
    "TransferKernel",
    "two_spin_transfer",
]
