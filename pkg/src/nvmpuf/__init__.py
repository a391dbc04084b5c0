"""NVM-PUF endurance modeling, behavioral simulation and attack evaluation.

The package is organized around five concerns:

- :mod:`nvmpuf.chains` — absorbing Markov chains describing per-cell write
  activity, with built-in REAP-NVM and A-MPUF models and a JSON chain-spec
  loader for user-defined designs.
- :mod:`nvmpuf.occupancy` — occupancy evolution and per-challenge set/reset
  visit-count distributions, with a Monte Carlo oracle.
- :mod:`nvmpuf.lifetime` — wear accumulation over N challenges, cell and
  device death probabilities, lifetime curves and half-life.
- :mod:`nvmpuf.device` — behavioral simulation of the REAP-NVM arbiter
  (and a plain APUF baseline) with wear tracking and CRP datasets.
- :mod:`nvmpuf.metrics` / :mod:`nvmpuf.attack` — response quality metrics
  and the logistic-regression modeling attack.
"""

from .attack import (
    AttackDataset,
    AttackResult,
    Source,
    attack_curve,
    dataset_from_crps,
    featurize,
    train,
)
from .chains import (
    BUILTIN_CHAIN_NAMES,
    CALIBRATED_MEAN_SET_PULSES,
    ChainFormatError,
    ChainParams,
    ChainValidationError,
    MarkovChainSpec,
    OpTag,
    StateSpec,
    build_ampuf_chain,
    build_reap_nvm_chain,
    builtin_chain,
    export_chain,
    load_chain,
    save_chain,
    validate,
)
from .device import (
    Challenge,
    CrpRecord,
    PufInstance,
    evaluate,
    evaluate_batch,
    gen_crps,
    load_crps,
    new_device,
    save_crps,
)
from .lifetime import (
    HalfLifeNotReached,
    LifetimeCurve,
    LifetimeParams,
    Mode,
    cell_dead_prob,
    default_challenge_grid,
    half_life,
    lifetime_curve,
    puf_dead_prob,
    total_ops_after_n,
)
from .metrics import (
    ResponseSet,
    pack,
    reliability,
    uniformity,
    uniqueness,
)
from .occupancy import (
    ConvergenceError,
    CountDistribution,
    PerChallengeOps,
    StateOccupancy,
    evolve,
    per_challenge_ops,
    sample_trajectories,
    total_variation,
    visit_count_distribution,
)

__version__ = "0.1.0"
