"""Fragment and global potentials: neural heads, embeddings, logic indicators.

A model scores a world as the beta-weighted sum of global potentials.  Each
neural global potential is the mean over all size-k fragments of a symmetric
fragment potential: the sum of one shared net's head outputs over the k!
anonymized codes of the fragment.  With an embedding table present the net
also sees the embeddings of the constants assigned to anonymized names
1..k, which breaks the symmetry on purpose.  Indicator potentials evaluate
a weighted quantifier-free formula per anonymization and contribute the
normalized truth frequency.

Everything here is batched over (fragment, anonymization) rows via
FragmentSpace gather arrays; per-fragment operations below are thin slices
of the same machinery.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .logic import Formula, compile_on_code, parse_formula, validate_formula
from .network import DenseNet, NumericError, init_net, net_backward, net_forward
from .relational import Fragment, Signature, World, fragment_space


@dataclass
class EmbeddingTable:
    """One real vector per constant in the signature."""

    vectors: np.ndarray  # (n_constants, dim)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[1] < 1:
            raise ValueError("embedding table must be (n_constants, dim>=1)")
        if not np.isfinite(self.vectors).all():
            raise NumericError("embedding entries must be finite")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass(frozen=True)
class IndicatorPotential:
    """A weighted quantifier-free formula over fragment variables."""

    formula: Formula
    weight: float

    @classmethod
    def parse(cls, text: str, weight: float) -> "IndicatorPotential":
        return cls(parse_formula(text), float(weight))

    def __str__(self):
        return f"{self.weight}: {self.formula}"


@dataclass
class PotentialModel:
    """Neural fragment potentials plus optional embeddings and indicators.

    ``betas`` has one mixture weight per neural head followed by one per
    indicator.  Symmetric mode is exactly the absence of embeddings.
    """

    signature: Signature
    k: int
    net: DenseNet | None
    betas: np.ndarray
    embeddings: EmbeddingTable | None = None
    indicators: tuple[IndicatorPotential, ...] = ()
    _indicator_fns: list = field(default_factory=list, repr=False, init=False)

    def __post_init__(self):
        if not 1 <= self.k <= self.signature.n_constants:
            raise ValueError(f"k={self.k} out of range for the signature")
        self.betas = np.asarray(self.betas, dtype=np.float64)
        space = self.space
        if self.net is not None:
            expected = space.length + (
                self.k * self.embeddings.dim if self.embeddings is not None else 0
            )
            if self.net.in_width != expected:
                raise ValueError(
                    f"net input width {self.net.in_width}, expected {expected}"
                )
        if self.embeddings is not None and self.embeddings.vectors.shape[0] != (
            self.signature.n_constants
        ):
            raise ValueError("embedding table must cover every constant")
        if self.betas.shape != (self.n_potentials,):
            raise ValueError(
                f"betas has length {self.betas.shape}, model defines "
                f"{self.n_potentials} potentials"
            )
        for ind in self.indicators:
            validate_formula(ind.formula, self.signature, self.k)
        self._indicator_fns = [
            compile_on_code(ind.formula, space) for ind in self.indicators
        ]

    @property
    def m(self) -> int:
        """Number of neural heads."""
        return self.net.out_width if self.net is not None else 0

    @property
    def n_potentials(self) -> int:
        return self.m + len(self.indicators)

    @property
    def symmetric(self) -> bool:
        return self.embeddings is None

    @property
    def space(self):
        return fragment_space(self.signature, self.k)

    def row_norms(self) -> np.ndarray:
        """Per-potential weight of one (fragment, anonymization) row in the
        global potential: 1/C for heads (anonymizations are summed), and
        1/(C*k!) for indicators (anonymizations are averaged)."""
        space = self.space
        c = space.n_fragments
        fact = space.rows_per_fragment
        return np.concatenate(
            [
                np.full(self.m, 1.0 / c),
                np.full(len(self.indicators), 1.0 / (c * fact)),
            ]
        )

    def net_inputs(self, codes: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
        """Net input rows for codes of shape (..., R', L).

        ``rows`` gives the FragmentSpace row index of each code row (needed to
        look up anonymization constants when embeddings are present); None
        means all rows in order.
        """
        x = np.asarray(codes, dtype=np.float64)
        if self.embeddings is None:
            return x
        space = self.space
        consts = space.row_consts if rows is None else space.row_consts[rows]
        emb = self.embeddings.vectors[consts]  # (R', k, d)
        emb = emb.reshape(*consts.shape[:-1], self.k * self.embeddings.dim)
        emb = np.broadcast_to(emb, x.shape[:-1] + (emb.shape[-1],))
        return np.concatenate([x, emb], axis=-1)

    def indicator_row_values(self, codes: np.ndarray) -> np.ndarray:
        """Per-row weighted truth values, shape (..., n_indicators)."""
        if not self.indicators:
            return np.zeros(codes.shape[:-1] + (0,))
        cols = [
            ind.weight * fn(codes).astype(np.float64)
            for ind, fn in zip(self.indicators, self._indicator_fns)
        ]
        return np.stack(cols, axis=-1)

    def copy(self) -> "PotentialModel":
        return PotentialModel(
            signature=self.signature,
            k=self.k,
            net=self.net.copy() if self.net is not None else None,
            betas=self.betas.copy(),
            embeddings=(
                EmbeddingTable(self.embeddings.vectors.copy())
                if self.embeddings is not None
                else None
            ),
            indicators=self.indicators,
        )


def make_model(
    signature: Signature,
    k: int,
    hidden: tuple[int, ...] = (75, 50),
    heads: int = 1,
    activation: str = "relu",
    embedding_dim: int | None = None,
    indicators: tuple[IndicatorPotential, ...] = (),
    rng: np.random.Generator | None = None,
) -> PotentialModel:
    """Fresh model with the default init (uniform fan-in scaling, betas = 1)."""
    rng = rng if rng is not None else np.random.default_rng()
    space = fragment_space(signature, k)
    embeddings = None
    in_width = space.length
    if embedding_dim is not None:
        embeddings = EmbeddingTable(
            rng.uniform(-1.0, 1.0, size=(signature.n_constants, embedding_dim))
        )
        in_width += k * embedding_dim
    net = init_net(in_width, hidden, heads, activation, rng) if heads > 0 else None
    n_potentials = heads + len(indicators)
    return PotentialModel(
        signature=signature,
        k=k,
        net=net,
        betas=np.ones(n_potentials),
        embeddings=embeddings,
        indicators=indicators,
    )


def _fragment_codes(fragment: Fragment, model: PotentialModel) -> tuple[np.ndarray, np.ndarray]:
    """(codes, row indices) of a fragment's k! anonymizations."""
    space = model.space
    if fragment.k != model.k:
        raise ValueError(f"fragment size {fragment.k} != model k {model.k}")
    frag_index = space.subset_index[tuple(sorted(fragment.constants))]
    rows = np.arange(
        frag_index * space.rows_per_fragment, (frag_index + 1) * space.rows_per_fragment
    )
    codes = fragment.world.bits[space.gather[rows]]
    return codes, rows


def symmetric_potential(fragment: Fragment, model: PotentialModel) -> np.ndarray:
    """Per-head sum of the net over all k! anonymized codes (symmetric mode)."""
    if not model.symmetric:
        raise ValueError("model has embeddings; use general_potential")
    if model.net is None:
        return np.zeros(0)
    codes, _ = _fragment_codes(fragment, model)
    out, _ = net_forward(model.net, codes.astype(np.float64))
    return out.sum(axis=0)


def general_potential(fragment: Fragment, model: PotentialModel) -> np.ndarray:
    """Per-head sum over anonymizations with embedding-augmented inputs."""
    if model.symmetric:
        raise ValueError("model has no embeddings; use symmetric_potential")
    codes, rows = _fragment_codes(fragment, model)
    out, _ = net_forward(model.net, model.net_inputs(codes, rows))
    return out.sum(axis=0)


def indicator_potential(fragment: Fragment, ind: IndicatorPotential) -> float:
    """Weight times the fraction of anonymizations satisfying the formula."""
    sig = fragment.world.signature
    validate_formula(ind.formula, sig, fragment.k)
    space = fragment_space(sig, fragment.k)
    fn = compile_on_code(ind.formula, space)
    frag_index = space.subset_index[tuple(sorted(fragment.constants))]
    rows = np.arange(
        frag_index * space.rows_per_fragment, (frag_index + 1) * space.rows_per_fragment
    )
    codes = fragment.world.bits[space.gather[rows]]
    return float(ind.weight * fn(codes).mean())


def fragment_potential(fragment: Fragment, model: PotentialModel) -> np.ndarray:
    """All potentials of one fragment: heads then indicators."""
    heads = (
        symmetric_potential(fragment, model)
        if model.symmetric
        else general_potential(fragment, model)
    )
    inds = [indicator_potential(fragment, ind) for ind in model.indicators]
    return np.concatenate([heads, np.asarray(inds)])


def global_potential(world: World, model: PotentialModel) -> np.ndarray:
    """Mean fragment potential over all C(n, k) fragments; heads then indicators."""
    return batched_global_potentials(model, world.bits[None, :])[0]


def world_score(world: World, model: PotentialModel) -> float:
    """Beta-weighted sum of global potentials: the unnormalized log-probability."""
    score = float(model.betas @ global_potential(world, model))
    if not np.isfinite(score):
        raise NumericError("non-finite world score")
    return score


def batched_global_potentials(model: PotentialModel, bits: np.ndarray) -> np.ndarray:
    """Global potential vectors for a batch of worlds, shape (B, P)."""
    space = model.space
    bits = np.asarray(bits, dtype=np.uint8)
    codes = bits[:, space.gather]  # (B, R, L)
    b, r, length = codes.shape
    parts = []
    if model.net is not None:
        x = model.net_inputs(codes.reshape(b * r, length), np.tile(np.arange(r), b))
        out, _ = net_forward(model.net, x)
        parts.append(out.reshape(b, r, model.m).sum(axis=1) / space.n_fragments)
    else:
        parts.append(np.zeros((b, 0)))
    if model.indicators:
        vals = model.indicator_row_values(codes)  # (B, R, n_ind)
        parts.append(vals.sum(axis=1) / (space.n_fragments * space.rows_per_fragment))
    else:
        parts.append(np.zeros((b, 0)))
    return np.concatenate(parts, axis=1)


def batched_scores(model: PotentialModel, bits: np.ndarray) -> np.ndarray:
    """World scores for a batch of worlds, shape (B,)."""
    return batched_global_potentials(model, bits) @ model.betas


def score_delta(world: World, atom_index: int, model: PotentialModel) -> float:
    """world_score with the atom flipped minus world_score as is.

    Only the C(n-a, k-a) fragments containing the atom's constants are
    re-evaluated (a = number of distinct constants in the atom).
    """
    space = model.space
    if not 0 <= atom_index < world.signature.n_atoms:
        raise ValueError(f"atom index {atom_index} out of range")
    rows, cols = space.affected_rows(atom_index)
    if rows.size == 0:
        return 0.0
    codes_cur = world.bits[space.gather[rows]]
    codes_flip = codes_cur.copy()
    codes_flip[np.arange(rows.size), cols] ^= 1
    delta = _row_score_sum(model, codes_flip, rows) - _row_score_sum(
        model, codes_cur, rows
    )
    return float(delta)


def _row_score_sum(model: PotentialModel, codes: np.ndarray, rows: np.ndarray) -> float:
    """Beta-weighted, normalized contribution of the given rows to the score."""
    space = model.space
    total = 0.0
    if model.net is not None:
        out, _ = net_forward(model.net, model.net_inputs(codes, rows))
        total += out.sum(axis=0) @ model.betas[: model.m] / space.n_fragments
    if model.indicators:
        vals = model.indicator_row_values(codes)
        total += (
            vals.sum(axis=0)
            @ model.betas[model.m :]
            / (space.n_fragments * space.rows_per_fragment)
        )
    return total


@dataclass
class ModelGrads:
    """Gradient accumulator aligned with a model's parameter groups."""

    net: list[tuple[np.ndarray, np.ndarray]] | None
    betas: np.ndarray
    embeddings: np.ndarray | None

    @classmethod
    def zeros_like(cls, model: PotentialModel) -> "ModelGrads":
        net = None
        if model.net is not None:
            net = [
                (np.zeros_like(l.weights), np.zeros_like(l.bias))
                for l in model.net.layers
            ]
        emb = (
            np.zeros_like(model.embeddings.vectors)
            if model.embeddings is not None
            else None
        )
        return cls(net=net, betas=np.zeros_like(model.betas), embeddings=emb)

    def axpy(self, scale: float, other: "ModelGrads") -> None:
        if self.net is not None:
            for (dw, db), (ow, ob) in zip(self.net, other.net):
                dw += scale * ow
                db += scale * ob
        self.betas += scale * other.betas
        if self.embeddings is not None:
            self.embeddings += scale * other.embeddings

    def arrays(self) -> list[np.ndarray]:
        out = []
        if self.net is not None:
            for dw, db in self.net:
                out.extend([dw, db])
        out.append(self.betas)
        if self.embeddings is not None:
            out.append(self.embeddings)
        return out

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float((a * a).sum()) for a in self.arrays())))

    def scale(self, factor: float) -> None:
        for a in self.arrays():
            a *= factor


def weighted_expectation_grads(
    model: PotentialModel,
    bits: np.ndarray,
    weights: np.ndarray,
    fragments: np.ndarray | None = None,
) -> tuple[np.ndarray, ModelGrads]:
    """Weighted mean of global potentials and of score gradients.

    For worlds ``bits`` (B, A) with weights w_b, returns
    (sum_b w_b * Phi(w_b), gradients of sum_b w_b * score(w_b)) where the
    beta gradient slot holds sum_b w_b * Phi(w_b) itself (the score is linear
    in beta).  With w = 1/B this is a plain average (data side); with
    w = P(world) it is the model expectation (exact side).

    ``fragments`` restricts the global potentials to a subset of fragment
    indices with unweighted renormalization (fragment subsampling during
    training); None means all fragments.
    """
    space = model.space
    bits = np.asarray(bits, dtype=np.uint8)
    weights = np.asarray(weights, dtype=np.float64)
    b = bits.shape[0]
    if fragments is None:
        row_ids = np.arange(space.gather.shape[0])
        n_frag = space.n_fragments
    else:
        fragments = np.asarray(fragments, dtype=np.int64)
        rpf = space.rows_per_fragment
        row_ids = (fragments[:, None] * rpf + np.arange(rpf)).ravel()
        n_frag = fragments.size
    codes = bits[:, space.gather[row_ids]]
    grads = ModelGrads.zeros_like(model)
    phi = np.zeros(model.n_potentials)

    if model.net is not None:
        r = row_ids.size
        x = model.net_inputs(codes.reshape(b * r, space.length), np.tile(row_ids, b))
        out, tape = net_forward(model.net, x)
        phi[: model.m] = (out.reshape(b, r, model.m).sum(axis=1) / n_frag).T @ weights
        # d(sum_b w_b score)/d(net params): cotangent row of world b is
        # w_b * beta_head / n_frag for every one of its rows.
        cot = np.repeat(weights, r)[:, None] * (
            model.betas[: model.m][None, :] / n_frag
        )
        net_grads, input_grads = net_backward(model.net, tape, cot)
        grads.net = net_grads
        if model.embeddings is not None:
            d = model.embeddings.dim
            emb_grads = input_grads[:, space.length :].reshape(b * r, model.k, d)
            idx = np.tile(space.row_consts[row_ids], (b, 1))
            np.add.at(grads.embeddings, idx.ravel(), emb_grads.reshape(-1, d))
    if model.indicators:
        vals = model.indicator_row_values(codes)
        phi[model.m :] = (
            vals.sum(axis=1) / (n_frag * space.rows_per_fragment)
        ).T @ weights
    grads.betas = phi.copy()
    return phi, grads
