"""Eigenstate certification for tilted Fermi-Hubbard quantum simulators."""

__version__ = "0.1.0"

from .fock import BasisSector, FockState, apply_hop, enumerate_sector, half_filling, occupancy
from .model import (
    Geometry,
    ModelParams,
    TiltedHubbard,
    build_charge_projectors,
    build_hamiltonian,
    build_spin_squared,
    tilt_profile,
)
from .spectral import (
    EigenstateRecord,
    SweepTable,
    charge_profile,
    detect_anticrossings,
    grid,
    low_spectrum,
    min_gap,
    sweep_spectrum,
)
from .dynamics import (
    StateTrajectory,
    TiltSchedule,
    adiabatic_time_bound,
    evolve_state,
    instantaneous_fidelity,
    schedule_epsilon,
    time_averaged_charge,
)
from .opensys import (
    ChargeDistribution,
    charge_distribution,
    evolve_lindblad,
    kl_distance,
    sample_complexity,
    von_neumann_entropy,
)
from .certify import (
    CertificationPlan,
    ConfusionMatrix,
    PlanningError,
    classify_outcome,
    hyperfine_mixing_rate,
    plan_tilts,
    simulate_protocol,
)
