"""Compositional energy-based modeling toolkit.

Represent distributions as energy functions, combine them with product /
mixture / negation operators, and sample the compositions with annealed MCMC
over diffusion-style noise-level sequences.  Discrete counterparts (Gibbs,
independence Metropolis-Hastings) come with enumeration oracles.
"""

from .compose import (
    CompositionSpec,
    compose_diffused,
    mixture_energy,
    mixture_families,
    negation_energy,
    product_energy,
    product_families,
    spec_from_json,
    spec_to_json,
)
from .energies import (
    CallableEnergy,
    DiffusedEnergyFamily,
    DiffusedGmm,
    EnergyFunction,
    GmmEnergy,
    NoiseSchedule,
    diffuse_gmm,
    eps_from_score,
    gaussian_energy,
    gmm_from_json,
    gmm_to_json,
    linear_schedule,
    schedule_from_json,
    schedule_to_json,
    score_from_eps,
)
from .errors import ChainError, CompositionError, ConfigError, DimensionMismatchError
from .kernels import BACKEND
from .metrics import MetricsReport, ess, grid_density_1d, grid_density_2d, histogram_kl, mmd_rbf
from .samplers import (
    ChainState,
    SamplerConfig,
    annealed_compose_sample,
    equivalence_report,
    hmc_step,
    mala_step,
    naive_reverse_on_composed,
    reverse_step,
    run_chain,
    tempering_measurement,
    ula_step,
)

__version__ = "0.1.0"
