"""spinforge: cavity-mediated spin squeezing on an optical clock transition.

Simulation and analysis of one-axis twisting (oat) and two-spin squeezing
(tss) with collective emission, single-particle decoherence, and atom-number
fluctuations: exact Dicke-basis solvers, a truncated Wigner solver, closed
forms with numeric cross-checks, and a reproduction harness (CLI: spinforge).
"""

__version__ = "0.1.0"

from . import analytic, dicke_solver, pair_basis, spin_core, squeezing, twa
from .analytic import (CavityRates, DecoherenceChannels, cavity_rates,
                       number_fluctuation_bound, optimum_fixed_ratio,
                       optimum_over_detuning, xi2_model)
from .dicke_solver import (EvolutionResult, LindbladSpec, evolve_oat_master,
                           evolve_tss_master_truncated,
                           evolve_tss_unitary_truncated, trajectory_unravel)
from .spin_core import (DickeKet, DensityOperator, SpinLength,
                        TruncatedManifoldKet, TwoEnsembleKet, coherent_state,
                        expectation, rotate_y)
from .squeezing import (QuadratureCorrelators, SqueezingReport,
                        cavity_field_estimate, squeezing_parameter,
                        squeezing_report, tss_frame_map,
                        variances_from_correlators)
from .twa import (MeanFieldParams, TrajectoryBatch, WignerSamplingSpec,
                  batch_correlators, evolve_trajectories, run_twa,
                  sample_initial)
