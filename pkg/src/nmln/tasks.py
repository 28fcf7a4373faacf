"""Evaluation protocols: corruption ranking, triple classification, generation.

Ranking follows the filtered-corruption protocol: every binary test fact is
ranked against all argument corruptions absent from the KB, by marginal
probabilities estimated with the KB clamped as evidence.  Generation keeps
an isomorphism-invariant tally of chain snapshots and reports the most
frequent structures.
"""

from __future__ import annotations

import itertools
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .gibbs import build_schedule, estimate_marginals
from .potentials import PotentialModel
from .relational import Signature, World

CANONICAL_MAX_CONSTANTS = 8


@dataclass(frozen=True)
class SamplerConfig:
    """Marginal-estimation settings for the evaluation protocols.

    ``k`` overrides the blocked-schedule fragment size (None: the model's
    own k).  Training-side sampler knobs (noise probability, negative-based
    pair subsampling) live on the training config, which owns the epochs
    they apply to.
    """

    mode: str = "blocked"  # sequential | blocked | constrained
    chains: int = 10
    burn_in: int = 500
    sweeps: int = 1000
    seed: int = 0
    k: int | None = None

    def __post_init__(self):
        if self.mode not in ("sequential", "blocked", "constrained"):
            raise ValueError(f"unknown sampler mode {self.mode!r}")


@dataclass(frozen=True)
class RankResult:
    test_atom: int
    n_corruptions: int
    rank: float

    def __post_init__(self):
        if not 1.0 <= self.rank <= self.n_corruptions + 1:
            raise ValueError("rank out of bounds")

    @property
    def reciprocal_rank(self) -> float:
        return 1.0 / self.rank


def corruptions(test_atom: int, kb: World, signature: Signature) -> list[int]:
    """Argument corruptions of a binary fact not already true in the KB.

    First-argument corruptions come first, then second-argument ones, each in
    constant order; the test atom itself is never included.
    """
    pred, args = signature.atom_of_index(test_atom)
    if len(args) != 2:
        raise ValueError(f"ranking handles binary atoms only, got {pred}/{len(args)}")
    a, b = args
    out = []
    for a2 in range(signature.n_constants):
        if a2 == a:
            continue
        idx = signature.atom_index(pred, (a2, b))
        if not kb.bits[idx]:
            out.append(idx)
    for b2 in range(signature.n_constants):
        if b2 == b:
            continue
        idx = signature.atom_index(pred, (a, b2))
        if not kb.bits[idx] and idx not in out:
            out.append(idx)
    return out


def query_marginals(
    model: PotentialModel,
    kb: World,
    query_atoms: list[int],
    config: SamplerConfig,
    seed=None,
) -> np.ndarray:
    """Marginals of the query atoms with every other atom clamped to the KB."""
    sig = model.signature
    clamp = np.ones(sig.n_atoms, dtype=bool)
    clamp[list(query_atoms)] = False
    schedule = None
    schedule_k = config.k if config.k is not None else model.k
    if config.mode == "blocked" and model.k <= 3:
        schedule = build_schedule(sig, max(schedule_k, model.k))
    marginals = estimate_marginals(
        model,
        chains=config.chains,
        burn_in=config.burn_in,
        sweeps=config.sweeps,
        seed=config.seed if seed is None else seed,
        schedule=schedule,
        clamp_mask=clamp,
        clamp_values=kb.bits,
        init_bits=kb.bits,
    )
    return marginals[list(query_atoms)]


def rank_from_scores(gold: float, others) -> float:
    """Tie-averaged rank: 1 + #strictly-higher + #ties / 2."""
    others = np.asarray(others, dtype=np.float64)
    return 1.0 + int((others > gold).sum()) + int((others == gold).sum()) / 2.0


def rank_fact(
    test_atom: int,
    corrupted: list[int],
    model: PotentialModel,
    kb: World,
    config: SamplerConfig,
    seed=None,
) -> RankResult:
    """Rank one fact against its corruptions by estimated marginals.

    Ties are settled by the pessimistic-optimistic average:
    rank = 1 + #higher + #ties / 2.
    """
    marg = query_marginals(model, kb, [test_atom, *corrupted], config, seed=seed)
    return RankResult(
        test_atom=test_atom,
        n_corruptions=len(corrupted),
        rank=rank_from_scores(float(marg[0]), marg[1:]),
    )


def rank_all(
    test_atoms: list[int],
    model: PotentialModel,
    kb: World,
    config: SamplerConfig,
) -> list[RankResult]:
    """Rank every test fact; parallel across facts with derived seeds."""
    seeds = [np.random.SeedSequence([config.seed, i]) for i in range(len(test_atoms))]

    def one(i: int) -> RankResult:
        corr = corruptions(test_atoms[i], kb, model.signature)
        return rank_fact(test_atoms[i], corr, model, kb, config, seed=seeds[i])

    workers = int(os.environ.get("NMLN_THREADS", "1"))
    if workers <= 1:
        return [one(i) for i in range(len(test_atoms))]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, range(len(test_atoms))))


def kbc_metrics(
    results: list[RankResult], m_values: tuple[int, ...] = (1, 3, 10)
) -> dict[str, float]:
    """Mean reciprocal rank and HITS@m over a batch of rank results."""
    if not results:
        raise ValueError("no rank results")
    ranks = np.array([r.rank for r in results])
    out = {"mrr": float((1.0 / ranks).mean())}
    for m in m_values:
        out[f"hits@{m}"] = float((ranks <= m).mean())
    return out


def fit_thresholds(
    validation: list[tuple[str, float, int]],
) -> tuple[dict[str, float], float]:
    """Per-relation score thresholds maximizing validation accuracy.

    Returns (per-relation thresholds, global fallback threshold).
    """
    if not validation:
        raise ValueError("validation set is empty")

    def best(items: list[tuple[float, int]]) -> float:
        scores = sorted({s for s, _ in items})
        candidates = [scores[0] - 1.0]
        candidates += [(x + y) / 2 for x, y in zip(scores, scores[1:])]
        candidates += [scores[-1] + 1.0]
        best_t, best_acc = candidates[0], -1.0
        for t in candidates:
            acc = sum((s >= t) == bool(l) for s, l in items) / len(items)
            if acc > best_acc:
                best_t, best_acc = t, acc
        return best_t

    by_rel: dict[str, list[tuple[float, int]]] = {}
    for rel, score, label in validation:
        by_rel.setdefault(rel, []).append((score, label))
    thresholds = {rel: best(items) for rel, items in by_rel.items()}
    global_t = best([(s, l) for _, s, l in validation])
    return thresholds, global_t


def classify_triples(
    test: list[tuple[str, float, int]],
    validation: list[tuple[str, float, int]],
) -> tuple[float, dict[str, float]]:
    """Accuracy of thresholded triple classification.

    Thresholds are fitted per relation on the validation scores; relations
    unseen in validation fall back to the global threshold.
    """
    thresholds, global_t = fit_thresholds(validation)
    correct = 0
    for rel, score, label in test:
        t = thresholds.get(rel, global_t)
        correct += (score >= t) == bool(label)
    return correct / len(test), thresholds


# ---------------------------------------------------------------------------
# Generation


def canonical_structure_key(bits: np.ndarray, signature: Signature) -> bytes:
    """Isomorphism-invariant key: the minimum whole-structure anonymized code.

    The sorted multiset of a structure's n! anonymized codes is invariant
    under constant renaming; its first element (the lexicographic minimum)
    already determines the structure up to isomorphism and is what we store.
    Only supported up to 8 constants.
    """
    n = signature.n_constants
    if n > CANONICAL_MAX_CONSTANTS:
        raise ValueError(
            f"canonical keys support up to {CANONICAL_MAX_CONSTANTS} constants; "
            f"signature has {n}"
        )
    gather = _full_anonymization_gather(signature)
    codes = np.asarray(bits, dtype=np.uint8)[gather]
    # lexsort keys run least-significant first; column 0 is most significant
    first = np.lexsort(np.flipud(codes.T))[0]
    return codes[first].tobytes()


_GATHER_CACHE: dict[Signature, np.ndarray] = {}


def _full_anonymization_gather(signature: Signature) -> np.ndarray:
    """(n!, A) gather matrix: row p holds the code of the whole world under
    permutation p (constants relabeled in place)."""
    cached = _GATHER_CACHE.get(signature)
    if cached is not None:
        return cached
    n = signature.n_constants
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    inv = np.argsort(perms, axis=1)  # inv[p, j] = original constant named j+1
    blocks = []
    offset = 0
    for _, arity in signature.predicates:
        if arity == 1:
            blocks.append(offset + inv)
        else:
            blocks.append(
                (offset + inv[:, :, None] * n + inv[:, None, :]).reshape(-1, n * n)
            )
        offset += n**arity
    gather = np.concatenate(blocks, axis=1)
    _GATHER_CACHE[signature] = gather
    return gather


@dataclass
class SampleLog:
    """Frequency tally of canonicalized sampled structures."""

    signature: Signature
    counts: dict[bytes, int]
    representatives: dict[bytes, np.ndarray]
    kept: int = 0

    def add(self, bits: np.ndarray) -> None:
        key = canonical_structure_key(bits, self.signature)
        if key not in self.counts:
            self.counts[key] = 0
            self.representatives[key] = np.asarray(bits, dtype=np.uint8).copy()
        self.counts[key] += 1
        self.kept += 1

    def top(self, n: int) -> list[tuple[int, World]]:
        ordered = sorted(
            self.counts.items(), key=lambda kv: (-kv[1], kv[0])
        )[:n]
        return [
            (count, World(self.signature, self.representatives[key]))
            for key, count in ordered
        ]


def collect_generations(
    snapshots,
    signature: Signature,
    top_n: int,
    last_n: int | None = None,
) -> list[tuple[int, World]]:
    """Tally a snapshot stream and return the top-n structures by frequency.

    ``snapshots`` yields world bit arrays (single or per-chain batches), the
    hook output of a training or sampling run.  ``last_n`` keeps only the
    final window of kept snapshots before counting.
    """
    flat: list[np.ndarray] = []
    for snap in snapshots:
        snap = np.asarray(snap, dtype=np.uint8)
        if snap.ndim == 1:
            flat.append(snap)
        else:
            flat.extend(snap)
    if last_n is not None:
        flat = flat[-last_n:]
    log = SampleLog(signature, {}, {})
    for bits in flat:
        log.add(bits)
    return log.top(top_n)


def skip_bond_augment(
    world: World,
    bond_predicates: list[str] | None = None,
    skip_predicate: str = "SKIPBOND",
) -> World:
    """Add SKIPBOND(x, z) whenever bonds x-y and y-z exist with x, y, z distinct.

    Both directions are written, matching the symmetric bond listing.  Bond
    predicates default to every binary predicate except the skip predicate.
    """
    sig = world.signature
    preds = {name for name, arity in sig.predicates}
    if skip_predicate not in preds:
        raise ValueError(f"signature lacks the {skip_predicate} predicate")
    if bond_predicates is None:
        bond_predicates = [
            name
            for name, arity in sig.predicates
            if arity == 2 and name != skip_predicate
        ]
    n = sig.n_constants
    bonded = np.zeros((n, n), dtype=bool)
    for name in bond_predicates:
        if sig.predicate_arity(name) != 2:
            raise ValueError(f"bond predicate {name} is not binary")
        for x in range(n):
            for y in range(n):
                if world.bits[sig.atom_index(name, (x, y))]:
                    bonded[x, y] = True
    bonded |= bonded.T
    bits = world.bits.copy()
    for x, y, z in itertools.permutations(range(n), 3):
        if bonded[x, y] and bonded[y, z]:
            bits[sig.atom_index(skip_predicate, (x, z))] = 1
            bits[sig.atom_index(skip_predicate, (z, x))] = 1
    return World(sig, bits)
