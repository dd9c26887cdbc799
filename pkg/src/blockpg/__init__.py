"""Blocked Particle Gibbs sampling for hidden Markov models.

Conditional-SMC block kernels composed into left-to-right, parallel, and
reversible sweeps; exact-inference oracles for finite models; and calculators
for the Wasserstein contraction-rate bounds that make the samplers' stability
in the sequence length checkable at desk scale.
"""

from .blocking import BlockCover, XiSystem, build_cover, explicit_cover, lump, validate_cover
from .errors import (
    BlockPgError,
    CapacityError,
    CoverError,
    ModelError,
    WeightCollapseError,
)
from .hmm import (
    GaussianEmission,
    GenericHmm,
    LogTables,
    MixingProfile,
    ObservationRecord,
    TableEmission,
    TabularHmm,
    jsd_log_density,
    load_model,
    log_evidence,
    mixing_profile,
    save_model,
    simulate,
)
from .kernels import COMPILED
from .pg import (
    MinorisationBound,
    ParticleSystem,
    ProposalKernel,
    minorisation_bound,
    minorisation_empirical,
    pg_block_step,
)
from .sweeps import (
    AutocorrCollector,
    ChainState,
    ChainTrace,
    KernelConfig,
    SiteMarginalCollector,
    SweepSchedule,
    TraceCollector,
    UpdateRateCollector,
    init_chain,
    run_chain,
    sweep,
)

__version__ = "0.1.0"
