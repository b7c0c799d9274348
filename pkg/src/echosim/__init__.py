"""Loschmidt echo and purity decay under classical noise, in phase space."""

__version__ = "0.1.0"

from .exceptions import (ConfigError, DegenerateStateError, DomainError, EchoSimError, FitError,
                         FloorDominatedError, GridMismatchError, GridTooCoarseError,
                         InsufficientDecayError, LeakageError, NumericAbort, TrajectoryEscapeError)
from .phasespace import (DensityMatrix, PhaseSpaceGrid, WaveFunction, WignerFunction,
                         boundary_leakage, density_from_pure, make_cat_state, make_gaussian_state,
                         mixture, overlap_trace, purity, wigner_transform)
from .propagators import (CouplingFunction, EvolutionParams, HamiltonianSpec, Trajectory,
                          evolve_master, evolve_unitary, iter_unitary)
from .noise import (EnsembleAccumulator, NoiseProcess, inequality_margin, run_echo_ensemble,
                    run_ensemble, sample_realization)
from .observables import (DecayTrace, RateFit, fit_decay_rates, fringe_amplitude,
                          region_decomposition, sigma_bar, sigma_echo)
from .analytic import (IOEchoParams, LyapunovEstimate, chaotic_sea_lyapunov, fringe_decay_rate,
                       io_echo_exact, io_long_time_rate, lyapunov_benettin)
from .config import ScenarioConfig, load_config
from .runner import RunResult, run_scan_d, run_scenario

__all__ = [
    "__version__",
    "ConfigError", "DegenerateStateError", "DomainError", "EchoSimError", "FitError",
    "FloorDominatedError", "GridMismatchError", "GridTooCoarseError", "InsufficientDecayError",
    "LeakageError", "NumericAbort", "TrajectoryEscapeError",
    "DensityMatrix", "PhaseSpaceGrid", "WaveFunction", "WignerFunction", "boundary_leakage",
    "density_from_pure", "make_cat_state", "make_gaussian_state", "mixture", "overlap_trace",
    "purity", "wigner_transform",
    "CouplingFunction", "EvolutionParams", "HamiltonianSpec", "Trajectory", "evolve_master",
    "evolve_unitary", "iter_unitary",
    "EnsembleAccumulator", "NoiseProcess", "inequality_margin", "run_echo_ensemble",
    "run_ensemble", "sample_realization",
    "DecayTrace", "RateFit", "fit_decay_rates", "fringe_amplitude", "region_decomposition",
    "sigma_bar", "sigma_echo",
    "IOEchoParams", "LyapunovEstimate", "chaotic_sea_lyapunov", "fringe_decay_rate",
    "io_echo_exact", "io_long_time_rate", "lyapunov_benettin",
    "ScenarioConfig", "load_config", "RunResult", "run_scan_d", "run_scenario",
]
