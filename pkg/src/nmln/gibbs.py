"""Gibbs sampling over worlds: sequential, blocked-parallel, and constrained.

The sampler works on an ensemble of chains at once (the chain axis is
vectorized), which is also how model expectations are estimated during
training.  Each atom update draws from the exact conditional
sigma(score(atom=1) - score(atom=0)); deltas touch only the fragments that
contain the atom's constants.  For symmetric models with short codes the
per-row potential values are precomputed into a lookup table indexed by the
code's integer value, which makes long runs cheap; otherwise rows are
evaluated through the net on demand.  Both paths are exact.

Blocked schedules exploit conditional independence: with fragment size k,
binary atoms over constant-disjoint pairs (k = 3) or distinct pairs (k = 2)
do not interact once unary and reflexive atoms are fixed, so whole groups of
pair blocks can be resampled against the same snapshot.  The program still
updates them in a plain loop; independence makes that equal to the parallel
semantics, and the chain axis carries the actual vectorization.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

import numpy as np

from .potentials import PotentialModel, net_forward, score_delta
from .relational import Signature, World

TABLE_BITS_CAP = 14


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class ChainState:
    """One persistent Gibbs chain: current world, rng, and sweep counter."""

    world: World
    rng: np.random.Generator
    sweeps: int = 0

    @classmethod
    def from_seed(cls, world: World, seed: int) -> "ChainState":
        return cls(world=world, rng=np.random.default_rng(seed))


@dataclass(frozen=True)
class ExclusionBlock:
    """Atoms over one constant tuple, at most / exactly one of which is true."""

    atoms: tuple[int, ...]
    rule: str  # "exactly-one" | "at-most-one"

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("exclusion block must be nonempty")
        if self.rule not in ("exactly-one", "at-most-one"):
            raise ValueError(f"unknown cardinality rule {self.rule!r}")


def validate_blocks(signature: Signature, blocks: list[ExclusionBlock]) -> None:
    """Check that each block's atoms share one constant tuple and blocks are disjoint."""
    seen: set[int] = set()
    for block in blocks:
        tuples = {signature.atom_of_index(a)[1] for a in block.atoms}
        if len(tuples) != 1:
            raise ValueError(f"block atoms span several constant tuples: {tuples}")
        for a in block.atoms:
            if a in seen:
                raise ValueError(f"atom {a} appears in more than one block")
            seen.add(a)


def exclusion_blocks_for_predicates(
    signature: Signature, predicates: list[str], rule: str
) -> list[ExclusionBlock]:
    """One block per constant tuple, covering the named predicates.

    Unary predicates give one block per constant; binary ones give one block
    per ordered pair of distinct constants.
    """
    arities = {signature.predicate_arity(p) for p in predicates}
    if len(arities) != 1:
        raise ValueError("exclusion predicates must share one arity")
    (arity,) = arities
    n = signature.n_constants
    blocks = []
    for args in itertools.product(range(n), repeat=arity):
        if arity == 2 and args[0] == args[1]:
            continue
        atoms = tuple(signature.atom_index(p, args) for p in predicates)
        blocks.append(ExclusionBlock(atoms, rule))
    return blocks


# ---------------------------------------------------------------------------
# Block schedules


@dataclass(frozen=True)
class BlockSchedule:
    """Ordered update groups; blocks within a group update concurrently.

    ``safe_k`` is the largest model fragment size for which the group
    parallelism is exact (None: fully sequential, always exact).
    """

    signature: Signature
    mode: str
    groups: tuple[tuple[tuple[int, ...], ...], ...]
    safe_k: int | None

    def atom_order(self) -> list[int]:
        return [a for group in self.groups for block in group for a in block]


def sequential_schedule(signature: Signature) -> BlockSchedule:
    atoms = tuple(range(signature.n_atoms))
    return BlockSchedule(signature, "sequential", ((atoms,),), None)


def _local_atoms(signature: Signature, c: int) -> list[int]:
    """Unary and reflexive atoms of one constant, in canonical order."""
    out = []
    for name, arity in signature.predicates:
        if arity == 1:
            out.append(signature.atom_index(name, (c,)))
        else:
            out.append(signature.atom_index(name, (c, c)))
    return sorted(out)


def _pair_block(signature: Signature, a: int, b: int) -> tuple[int, ...]:
    atoms = []
    for name, arity in signature.predicates:
        if arity == 2:
            atoms.append(signature.atom_index(name, (a, b)))
            atoms.append(signature.atom_index(name, (b, a)))
    return tuple(sorted(atoms))


def round_robin_pairs(n: int) -> list[list[tuple[int, int]]]:
    """1-factorization of the complete pair graph by the circle method.

    n - 1 rounds of disjoint pairs for even n, n rounds for odd n; every
    pair appears in exactly one round.
    """
    if n < 2:
        return []
    m = n if n % 2 == 0 else n + 1
    rounds = []
    for r in range(m - 1):
        pairs = [(r, m - 1)]
        for i in range(1, m // 2):
            pairs.append(((r + i) % (m - 1), (r - i) % (m - 1)))
        pairs = [tuple(sorted(p)) for p in pairs if max(p) < n]
        rounds.append(sorted(pairs))
    return rounds


def build_schedule(
    signature: Signature,
    k: int,
    n: int | None = None,
    pairs: list[tuple[int, int]] | None = None,
) -> BlockSchedule:
    """Parallel update schedule for fragment size k in {1, 2, 3}.

    k=1: one group per constant over its unary and reflexive atoms, then one
    parallel group of the remaining binary atoms (their conditionals do not
    depend on anything at k=1).  k=2: unary/reflexive sequentially, then all
    distinct-pair blocks in one group.  k=3: unary/reflexive, then the
    round-robin rounds, whose pairs are constant-disjoint.

    ``pairs`` restricts the scheduled pair blocks (negative-based
    subsampling); unary and reflexive atoms are always covered.
    """
    if k not in (1, 2, 3):
        raise ValueError(f"blocked schedules support k in 1..3, got k={k}")
    n = signature.n_constants if n is None else n
    if not 1 <= n <= signature.n_constants:
        raise ValueError(f"n={n} out of range")
    pair_ok = None if pairs is None else {tuple(sorted(p)) for p in pairs}

    def keep(p):
        return pair_ok is None or tuple(sorted(p)) in pair_ok

    all_pairs = [p for p in itertools.combinations(range(n), 2) if keep(p)]
    groups: list[tuple[tuple[int, ...], ...]] = []
    if k == 1:
        for c in range(n):
            groups.append((tuple(_local_atoms(signature, c)),))
        cross = [
            (signature.atom_index(name, (a, b)),)
            for name, arity in signature.predicates
            if arity == 2
            for a, b in itertools.permutations(range(n), 2)
            if keep((a, b))
        ]
        if cross:
            groups.append(tuple(sorted(cross)))
        return BlockSchedule(signature, "k1", tuple(groups), 1)

    local = tuple(
        sorted(a for c in range(n) for a in _local_atoms(signature, c))
    )
    groups.append((local,))
    if k == 2:
        blocks = tuple(_pair_block(signature, a, b) for a, b in all_pairs)
        blocks = tuple(b for b in blocks if b)
        if blocks:
            groups.append(blocks)
        return BlockSchedule(signature, "k2", tuple(groups), 2)

    for round_pairs in round_robin_pairs(n):
        blocks = tuple(
            _pair_block(signature, a, b) for a, b in round_pairs if keep((a, b))
        )
        blocks = tuple(b for b in blocks if b)
        if blocks:
            groups.append(blocks)
    return BlockSchedule(signature, "k3", tuple(groups), 3)


def select_pairs(
    world: World, empty_fraction: float, rng: np.random.Generator
) -> list[tuple[int, int]]:
    """Pairs with at least one true relation, plus a random fraction of the rest."""
    sig = world.signature
    n = sig.n_constants
    linked, empty = [], []
    for a, b in itertools.combinations(range(n), 2):
        block = _pair_block(sig, a, b)
        (linked if any(world.bits[i] for i in block) else empty).append((a, b))
    keep = [p for p in empty if rng.random() < empty_fraction]
    return linked + keep


# ---------------------------------------------------------------------------
# Delta scoring engine


class DeltaScorer:
    """Computes score(atom=1) - score(atom=0) across a chain ensemble.

    Bound to one model snapshot; rebuild after parameter updates.
    """

    def __init__(self, model: PotentialModel, table_bits_cap: int = TABLE_BITS_CAP):
        self.model = model
        self.space = model.space
        space = self.space
        self.table: np.ndarray | None = None
        self._pow2 = 1 << np.arange(space.length, dtype=np.int64)
        if model.symmetric and space.length <= table_bits_cap:
            codes = ((np.arange(1 << space.length)[:, None] >> np.arange(space.length)) & 1).astype(np.uint8)
            values = np.zeros(1 << space.length)
            if model.net is not None:
                out, _ = net_forward(model.net, codes.astype(np.float64))
                values += out @ model.betas[: model.m] / space.n_fragments
            if model.indicators:
                vals = model.indicator_row_values(codes)
                values += vals @ model.betas[model.m :] / (
                    space.n_fragments * space.rows_per_fragment
                )
            self.table = values

    def bind(self, bits: np.ndarray) -> "SamplerState":
        bits = np.array(bits, dtype=np.uint8, copy=True)
        if bits.ndim == 1:
            bits = bits[None, :]
        ints = None
        if self.table is not None:
            ints = (bits[:, self.space.gather].astype(np.int64) @ self._pow2).astype(
                np.int64
            )
        return SamplerState(bits=bits, ints=ints)

    def delta_on(self, state: "SamplerState", atom: int) -> np.ndarray:
        """score(atom=1) - score(atom=0) per chain, other atoms as in state."""
        space = self.space
        rows, cols = space.affected_rows(atom)
        if rows.size == 0:
            return np.zeros(state.bits.shape[0])
        if self.table is not None:
            masks = (1 << cols.astype(np.int64))[None, :]
            off = state.ints[:, rows] & ~masks
            on = off | masks
            return (self.table[on] - self.table[off]).sum(axis=1)
        codes = state.bits[:, space.gather[rows]]
        nc, r = codes.shape[0], rows.size
        pos = (np.arange(r), cols)
        codes_off = codes.copy()
        codes_off[:, pos[0], pos[1]] = 0
        codes_on = codes.copy()
        codes_on[:, pos[0], pos[1]] = 1
        return self._row_values(codes_on, rows).sum(axis=1) - self._row_values(
            codes_off, rows
        ).sum(axis=1)

    def _row_values(self, codes: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """Beta-weighted normalized row contributions, shape (nc, r)."""
        model, space = self.model, self.space
        nc, r, length = codes.shape
        total = np.zeros((nc, r))
        if model.net is not None:
            x = model.net_inputs(codes.reshape(nc * r, length), np.tile(rows, nc))
            out, _ = net_forward(model.net, x)
            total += out.reshape(nc, r, model.m) @ model.betas[: model.m] / space.n_fragments
        if model.indicators:
            vals = model.indicator_row_values(codes)
            total += vals @ model.betas[model.m :] / (
                space.n_fragments * space.rows_per_fragment
            )
        return total

    def set_atom(self, state: "SamplerState", atom: int, values: np.ndarray) -> None:
        """Assign an atom across chains, keeping cached code ints in sync."""
        values = values.astype(np.uint8)
        flips = state.bits[:, atom] != values
        if not flips.any():
            return
        state.bits[:, atom] = values
        if state.ints is not None:
            rows, cols = self.space.affected_rows(atom)
            if rows.size:
                masks = (1 << cols.astype(np.int64))[None, :]
                state.ints[:, rows] ^= np.where(flips[:, None], masks, 0)


@dataclass
class SamplerState:
    """Mutable ensemble state: truth bits per chain plus cached code ints."""

    bits: np.ndarray  # (n_chains, A) uint8
    ints: np.ndarray | None = None  # (n_chains, R) int64 when table-backed


def _update_atom(
    scorer: DeltaScorer, state: SamplerState, atom: int, rng: np.random.Generator
) -> None:
    p1 = sigmoid(scorer.delta_on(state, atom))
    draw = rng.random(state.bits.shape[0])
    scorer.set_atom(state, atom, (draw < p1).astype(np.uint8))


def _update_exclusion_block(
    scorer: DeltaScorer,
    state: SamplerState,
    block: ExclusionBlock,
    rng: np.random.Generator,
) -> None:
    """Joint resample of a block from its exact conditional over legal states."""
    nc = state.bits.shape[0]
    for atom in block.atoms:
        scorer.set_atom(state, atom, np.zeros(nc, dtype=np.uint8))
    deltas = np.stack(
        [scorer.delta_on(state, atom) for atom in block.atoms], axis=1
    )  # (nc, B): log-weight of the one-hot state of each atom vs all-false
    if block.rule == "at-most-one":
        logw = np.concatenate([np.zeros((nc, 1)), deltas], axis=1)
        choices = _categorical(logw, rng) - 1  # -1 selects the all-false state
    else:
        choices = _categorical(deltas, rng)
    for j, atom in enumerate(block.atoms):
        scorer.set_atom(state, atom, (choices == j).astype(np.uint8))


def _categorical(logw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    logw = logw - logw.max(axis=1, keepdims=True)
    w = np.exp(logw)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(logw.shape[0]) * cdf[:, -1]
    return (u[:, None] >= cdf).sum(axis=1)


# ---------------------------------------------------------------------------
# Public sweep operations (single chain, spec surface)


def conditional_prob(chain: ChainState, atom_index: int, model: PotentialModel) -> float:
    """P(atom = true | all other atoms), from the incremental score delta."""
    world = chain.world
    sd = score_delta(world, atom_index, model)
    delta_on = sd if world.bits[atom_index] == 0 else -sd
    return float(sigmoid(np.asarray(delta_on)))


def _single_chain_sweep(chain, model, runner) -> ChainState:
    scorer = DeltaScorer(model)
    state = scorer.bind(chain.world.bits)
    runner(scorer, state, chain.rng)
    return replace(
        chain, world=World(chain.world.signature, state.bits[0]), sweeps=chain.sweeps + 1
    )


def sweep_sequential(chain: ChainState, model: PotentialModel) -> ChainState:
    """Resample every atom once from its exact conditional, in canonical order."""

    def run(scorer, state, rng):
        for atom in range(chain.world.signature.n_atoms):
            _update_atom(scorer, state, atom, rng)

    return _single_chain_sweep(chain, model, run)


def sweep_blocked(
    chain: ChainState, model: PotentialModel, schedule: BlockSchedule
) -> ChainState:
    """Process schedule groups in order; blocks within a group are independent."""
    _check_schedule(schedule, model)

    def run(scorer, state, rng):
        for group in schedule.groups:
            for block in group:
                for atom in block:
                    _update_atom(scorer, state, atom, rng)

    return _single_chain_sweep(chain, model, run)


def sweep_constrained(
    chain: ChainState, model: PotentialModel, blocks: list[ExclusionBlock]
) -> ChainState:
    """Resample each exclusion block jointly over its legal states."""
    validate_blocks(chain.world.signature, blocks)

    def run(scorer, state, rng):
        for block in blocks:
            _update_exclusion_block(scorer, state, block, rng)

    return _single_chain_sweep(chain, model, run)


def _check_schedule(schedule: BlockSchedule, model: PotentialModel) -> None:
    if schedule.signature != model.signature:
        raise ValueError("schedule was built for a different signature")
    if schedule.safe_k is not None and model.k > schedule.safe_k:
        raise ValueError(
            f"schedule mode {schedule.mode} is exact only for k <= "
            f"{schedule.safe_k}; model has k={model.k}"
        )


def apply_noise(world: World, pi_n: float, rng: np.random.Generator) -> World:
    """Flip every atom independently with probability pi_n."""
    if not 0.0 <= pi_n <= 1.0:
        raise ValueError(f"pi_n={pi_n} must be in [0, 1]")
    flips = (rng.random(world.signature.n_atoms) < pi_n).astype(np.uint8)
    return World(world.signature, world.bits ^ flips)


# ---------------------------------------------------------------------------
# Ensemble runner


@dataclass
class GibbsRun:
    """Result of a multi-chain run: final state and pooled marginals."""

    bits: np.ndarray  # (n_chains, A)
    marginals: np.ndarray | None
    kept: int
    sweeps_done: int


def run_gibbs(
    model: PotentialModel,
    init_bits: np.ndarray,
    rng: np.random.Generator,
    sweeps: int,
    burn_in: int = 0,
    schedule: BlockSchedule | None = None,
    constraints: list[ExclusionBlock] | None = None,
    clamp_mask: np.ndarray | None = None,
    track_marginals: bool = False,
    snapshot_cb=None,
    scorer: DeltaScorer | None = None,
) -> GibbsRun:
    """Advance an ensemble of chains and optionally pool marginal estimates.

    One sweep resamples every unclamped atom once: through the schedule
    (sequential when None), with exclusion blocks resampled jointly instead
    of atom-wise when constraints are given.  Marginal estimates average the
    post-sweep bits of every chain over the kept (post burn-in) sweeps.
    """
    sig = model.signature
    if schedule is not None:
        _check_schedule(schedule, model)
    else:
        schedule = sequential_schedule(sig)
    if constraints:
        validate_blocks(sig, constraints)
    scorer = scorer if scorer is not None else DeltaScorer(model)
    state = scorer.bind(init_bits)
    nc = state.bits.shape[0]

    skip = np.zeros(sig.n_atoms, dtype=bool)
    if clamp_mask is not None:
        skip |= np.asarray(clamp_mask, dtype=bool)
    constrained_atoms: list[ExclusionBlock] = list(constraints or [])
    for block in constrained_atoms:
        for a in block.atoms:
            skip[a] = True

    atom_plan = [
        [a for a in block if not skip[a]]
        for group in schedule.groups
        for block in group
    ]

    counts = np.zeros(sig.n_atoms) if track_marginals else None
    kept = 0
    for sweep in range(burn_in + sweeps):
        for block_atoms in atom_plan:
            for atom in block_atoms:
                _update_atom(scorer, state, atom, rng)
        for block in constrained_atoms:
            _update_exclusion_block(scorer, state, block, rng)
        if sweep >= burn_in:
            kept += 1
            if counts is not None:
                counts += state.bits.sum(axis=0)
            if snapshot_cb is not None:
                snapshot_cb(state.bits)
    marginals = counts / (kept * nc) if counts is not None and kept else None
    return GibbsRun(bits=state.bits, marginals=marginals, kept=kept * nc, sweeps_done=burn_in + sweeps)


def estimate_marginals(
    model: PotentialModel,
    chains: int = 10,
    burn_in: int = 1000,
    sweeps: int = 1000,
    seed: int = 0,
    schedule: BlockSchedule | None = None,
    constraints: list[ExclusionBlock] | None = None,
    clamp_mask: np.ndarray | None = None,
    clamp_values: np.ndarray | None = None,
    init_bits: np.ndarray | None = None,
) -> np.ndarray:
    """Pooled per-atom marginals from an ensemble of independent chains."""
    sig = model.signature
    rng = np.random.default_rng(seed)
    if init_bits is None:
        bits = (rng.random((chains, sig.n_atoms)) < 0.5).astype(np.uint8)
    else:
        bits = np.array(np.broadcast_to(init_bits, (chains, sig.n_atoms)), dtype=np.uint8)
    if clamp_mask is not None:
        clamp_mask = np.asarray(clamp_mask, dtype=bool)
        bits[:, clamp_mask] = np.asarray(clamp_values, dtype=np.uint8)[clamp_mask]
    run = run_gibbs(
        model,
        bits,
        rng,
        sweeps=sweeps,
        burn_in=burn_in,
        schedule=schedule,
        constraints=constraints,
        clamp_mask=clamp_mask,
        track_marginals=True,
    )
    marginals = run.marginals
    if clamp_mask is not None:
        marginals = marginals.copy()
        marginals[clamp_mask] = np.asarray(clamp_values, dtype=np.float64)[clamp_mask]
    return marginals
