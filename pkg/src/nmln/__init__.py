"""Neural Markov logic networks: exponential-family distributions over
relational worlds with learned neural fragment potentials."""

from .gibbs import (
    BlockSchedule,
    ChainState,
    ExclusionBlock,
    apply_noise,
    build_schedule,
    conditional_prob,
    estimate_marginals,
    sweep_blocked,
    sweep_constrained,
    sweep_sequential,
)
from .kb import build_signature, load_kb, save_world
from .logic import parse_formula
from .modelio import load_model, save_model
from .network import DenseNet, init_net, net_backward, net_forward
from .oracle import exact_marginals, model_a_distribution, partition
from .potentials import (
    EmbeddingTable,
    IndicatorPotential,
    PotentialModel,
    general_potential,
    global_potential,
    indicator_potential,
    make_model,
    score_delta,
    symmetric_potential,
    world_score,
)
from .relational import (
    AnonCode,
    Fragment,
    Signature,
    World,
    anonymize,
    canonical_atom_order,
    enumerate_fragments,
    isomorphic,
    restrict,
)
from .tasks import (
    RankResult,
    SamplerConfig,
    classify_triples,
    collect_generations,
    corruptions,
    kbc_metrics,
    rank_fact,
    skip_bond_augment,
)
from .training import GradientReport, TrainConfig, exact_grad, grad_step, train

__version__ = "0.1.0"
