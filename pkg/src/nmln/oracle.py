"""Brute-force ground truth on tiny domains.

Enumerates all 2^A truth assignments to compute the partition function,
per-atom marginals, exact distributions, and the classical weighted-rule
distribution that indicator potentials must reproduce.  World index bit j
is the truth value of atom j, so index 0 is the all-false world.
"""

from __future__ import annotations

import itertools

import numpy as np

from .logic import satisfaction_fraction
from .potentials import IndicatorPotential, PotentialModel, batched_scores
from .relational import Signature, World

DEFAULT_MAX_ATOMS = 20
_BLOCK = 1 << 14


class DomainTooLarge(ValueError):
    """Raised when exact enumeration over all worlds is infeasible."""


def _check_size(signature: Signature, max_atoms: int) -> int:
    a = signature.n_atoms
    if a > max_atoms:
        raise DomainTooLarge(
            f"{a} ground atoms means 2^{a} worlds; cap is {max_atoms} atoms"
        )
    return a


def bits_of_indices(indices: np.ndarray, n_atoms: int) -> np.ndarray:
    """Unpack world indices into (B, A) truth bits (atom j = bit j)."""
    indices = np.asarray(indices, dtype=np.int64)
    return ((indices[:, None] >> np.arange(n_atoms)) & 1).astype(np.uint8)


def index_of_world(world: World) -> int:
    return int(world.bits.astype(np.int64) @ (1 << np.arange(world.signature.n_atoms)))


def world_of_index(signature: Signature, index: int) -> World:
    return World(signature, bits_of_indices(np.asarray([index]), signature.n_atoms)[0])


def all_world_scores(
    model: PotentialModel, max_atoms: int = DEFAULT_MAX_ATOMS
) -> np.ndarray:
    """Unnormalized log-probability of every world, indexed by world index."""
    a = _check_size(model.signature, max_atoms)
    total = 1 << a
    scores = np.empty(total)
    for start in range(0, total, _BLOCK):
        idx = np.arange(start, min(start + _BLOCK, total))
        scores[idx] = batched_scores(model, bits_of_indices(idx, a))
    return scores


def log_partition_of_scores(scores: np.ndarray) -> float:
    m = float(scores.max())
    return m + float(np.log(np.exp(scores - m).sum()))


def partition(model: PotentialModel, max_atoms: int = DEFAULT_MAX_ATOMS) -> float:
    """log Z by stable log-sum-exp over all worlds."""
    return log_partition_of_scores(all_world_scores(model, max_atoms))


def distribution(model: PotentialModel, max_atoms: int = DEFAULT_MAX_ATOMS) -> np.ndarray:
    """Exact per-world probabilities, indexed by world index."""
    scores = all_world_scores(model, max_atoms)
    logz = log_partition_of_scores(scores)
    return np.exp(scores - logz)


def exact_marginals(
    model: PotentialModel, max_atoms: int = DEFAULT_MAX_ATOMS
) -> np.ndarray:
    """P(atom = true) for every ground atom."""
    a = _check_size(model.signature, max_atoms)
    probs = distribution(model, max_atoms)
    marginals = np.zeros(a)
    total = 1 << a
    for start in range(0, total, _BLOCK):
        idx = np.arange(start, min(start + _BLOCK, total))
        marginals += bits_of_indices(idx, a).T.astype(np.float64) @ probs[idx]
    return marginals


def exact_log_likelihood(
    model: PotentialModel, world: World, max_atoms: int = DEFAULT_MAX_ATOMS
) -> float:
    scores = all_world_scores(model, max_atoms)
    return float(scores[index_of_world(world)] - log_partition_of_scores(scores))


def model_a_distribution(
    rules: list[IndicatorPotential],
    k: int,
    signature: Signature,
    max_atoms: int = DEFAULT_MAX_ATOMS,
) -> np.ndarray:
    """Distribution of the weighted-rule exponential model, brute force.

    Exponent of a world: sum over rules of w times the mean, over size-k
    constant subsets, of the fraction of injective variable assignments
    satisfying the rule.  Evaluation goes straight through world truth
    lookups, independently of the anonymized-code machinery, so it can
    serve as the second route of the equivalence check.
    """
    a = _check_size(signature, max_atoms)
    n = signature.n_constants
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range")
    subsets = list(itertools.combinations(range(n), k))
    total = 1 << a
    exponents = np.zeros(total)
    for index in range(total):
        world = world_of_index(signature, index)
        for rule in rules:
            acc = 0.0
            for subset in subsets:
                acc += satisfaction_fraction(rule.formula, world, subset)
            exponents[index] += rule.weight * acc / len(subsets)
    logz = log_partition_of_scores(exponents)
    return np.exp(exponents - logz)
