"""Maximum-likelihood training with persistent Gibbs chains.

Each update follows the standard positive-minus-negative phase form: the
gradient of the log-likelihood w.r.t. a shared parameter is the data-side
gradient of the score minus its expectation under the model, and the
mixture-weight gradient is the residual between data statistics and model
statistics.  Model expectations come either from persistent chains advanced
a few sweeps per update, or from exact enumeration on tiny domains
(test/diagnostic mode).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gibbs import apply_noise, build_schedule, run_gibbs, select_pairs
from .oracle import DEFAULT_MAX_ATOMS, bits_of_indices, log_partition_of_scores
from .potentials import (
    IndicatorPotential,
    ModelGrads,
    PotentialModel,
    batched_global_potentials,
    batched_scores,
    make_model,
    weighted_expectation_grads,
)
from .relational import World


class TrainingError(RuntimeError):
    """Raised when training cannot continue; carries the last report."""

    def __init__(self, message: str, report: "GradientReport | None" = None):
        super().__init__(message)
        self.report = report


@dataclass
class TrainConfig:
    """Knobs for one training run.  Model-architecture fields are used only
    when no prebuilt model is passed to :func:`train`."""

    epochs: int = 200
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # adam | sgd
    pi_n: float = 0.0
    chains: int = 10
    sweeps_per_update: int = 2
    seed: int = 0
    grad_clip: float = 10.0
    exact_expectations: bool = False
    schedule_mode: str = "auto"  # auto | sequential | blocked
    neg_sample_rate: float | None = None
    disconnected_per_connected: int | None = 2
    checkpoint_every: int | None = None
    freeze_net: bool = False
    freeze_betas: bool = False
    freeze_embeddings: bool = False
    # architecture (used when train() builds the model itself)
    k: int = 2
    hidden: tuple[int, ...] = (75, 50)
    heads: int = 1
    activation: str = "relu"
    embedding_dim: int | None = None
    indicators: tuple[IndicatorPotential, ...] = ()

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.sweeps_per_update < 1:
            raise ValueError("sweeps_per_update must be >= 1")
        if not 0.0 <= self.pi_n <= 0.5:
            raise ValueError("pi_n must be in [0, 0.5]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule_mode not in ("auto", "sequential", "blocked"):
            raise ValueError(f"unknown schedule mode {self.schedule_mode!r}")


@dataclass
class GradientReport:
    """Per-update statistics: data vs model potentials and gradient norms."""

    epoch: int
    data_phi: np.ndarray
    model_phi: np.ndarray
    beta_residuals: np.ndarray
    grad_norms: dict[str, float]
    data_score: float

    def row(self) -> dict[str, float]:
        out = {
            "epoch": self.epoch,
            "data_score": self.data_score,
            "residual_max": float(np.abs(self.beta_residuals).max(initial=0.0)),
        }
        out.update(self.grad_norms)
        return out


class Optimizer:
    """Gradient-ascent step over the model's trainable arrays."""

    def __init__(self, model: PotentialModel, config: TrainConfig):
        self.config = config
        self.t = 0
        if config.optimizer == "adam":
            self.m = [np.zeros_like(a) for a in _model_arrays(model)]
            self.v = [np.zeros_like(a) for a in _model_arrays(model)]

    def step(self, model: PotentialModel, grads: ModelGrads) -> None:
        lr = self.config.learning_rate
        arrays = _model_arrays(model)
        garrays = grads.arrays()
        self.t += 1
        for i, (a, g) in enumerate(zip(arrays, garrays)):
            if self.config.optimizer == "sgd":
                a += lr * g
            else:
                b1, b2, eps = 0.9, 0.999, 1e-8
                self.m[i] = b1 * self.m[i] + (1 - b1) * g
                self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
                mhat = self.m[i] / (1 - b1**self.t)
                vhat = self.v[i] / (1 - b2**self.t)
                a += lr * mhat / (np.sqrt(vhat) + eps)


def _model_arrays(model: PotentialModel) -> list[np.ndarray]:
    arrays = []
    if model.net is not None:
        arrays.extend(model.net.parameters())
    arrays.append(model.betas)
    if model.embeddings is not None:
        arrays.append(model.embeddings.vectors)
    return arrays


def _apply_freezes(model: PotentialModel, grads: ModelGrads, config: TrainConfig) -> None:
    if config.freeze_net and grads.net is not None:
        for dw, db in grads.net:
            dw[:] = 0.0
            db[:] = 0.0
    if config.freeze_betas:
        grads.betas[:] = 0.0
    if config.freeze_embeddings and grads.embeddings is not None:
        grads.embeddings[:] = 0.0


def _grad_norms(grads: ModelGrads) -> dict[str, float]:
    norms = {}
    if grads.net is not None:
        total = 0.0
        for dw, db in grads.net:
            total += float((dw * dw).sum() + (db * db).sum())
        norms["grad_norm_net"] = float(np.sqrt(total))
    norms["grad_norm_betas"] = float(np.linalg.norm(grads.betas))
    if grads.embeddings is not None:
        norms["grad_norm_embeddings"] = float(np.linalg.norm(grads.embeddings))
    return norms


def _fragment_subset(
    model: PotentialModel, data_bits: np.ndarray, per_connected: int, rng
) -> np.ndarray | None:
    """Connected fragments of the data world plus sampled disconnected ones.

    A fragment counts as connected when it contains at least one true binary
    atom over distinct constants.  Returns fragment indices, or None when no
    subsampling is worthwhile (everything connected).
    """
    space = model.space
    sig = model.signature
    connected = []
    disconnected = []
    for f, subset in enumerate(space.subsets):
        linked = False
        for name, arity in sig.predicates:
            if arity != 2 or linked:
                continue
            for a in subset:
                for b in subset:
                    if a != b and data_bits[sig.atom_index(name, (a, b))]:
                        linked = True
                        break
                if linked:
                    break
        (connected if linked else disconnected).append(f)
    if not disconnected or not connected:
        return None
    take = min(len(disconnected), per_connected * len(connected))
    picked = rng.choice(len(disconnected), size=take, replace=False)
    subset_ids = np.array(sorted(connected + [disconnected[i] for i in picked]))
    return subset_ids


@dataclass
class _ChainPool:
    """Persistent chains shared across gradient updates."""

    bits: np.ndarray  # (n_chains, A)
    rng: np.random.Generator


def init_chains(
    data_worlds: list[World], config: TrainConfig, rng: np.random.Generator
) -> _ChainPool:
    """Chains start at noisy copies of the data worlds and are never reset."""
    sig = data_worlds[0].signature
    rows = []
    for i in range(config.chains):
        base = data_worlds[i % len(data_worlds)]
        rows.append(apply_noise(base, max(config.pi_n, 0.0), rng).bits)
    return _ChainPool(bits=np.stack(rows).astype(np.uint8), rng=rng)


def exact_expectation_grads(
    model: PotentialModel, max_atoms: int = DEFAULT_MAX_ATOMS
) -> tuple[np.ndarray, ModelGrads, float]:
    """(E_P[Phi], gradients of E_P[score], log Z) by full enumeration."""
    a = model.signature.n_atoms
    if a > max_atoms:
        raise ValueError(f"domain too large for exact expectations ({a} atoms)")
    total = 1 << a
    block = 1 << 12
    scores = np.empty(total)
    for start in range(0, total, block):
        idx = np.arange(start, min(start + block, total))
        scores[idx] = batched_scores(model, bits_of_indices(idx, a))
    logz = log_partition_of_scores(scores)
    probs = np.exp(scores - logz)
    phi = np.zeros(model.n_potentials)
    grads = ModelGrads.zeros_like(model)
    for start in range(0, total, block):
        idx = np.arange(start, min(start + block, total))
        p, g = weighted_expectation_grads(model, bits_of_indices(idx, a), probs[idx])
        phi += p
        grads.axpy(1.0, g)
    return phi, grads, logz


def exact_grad(
    model: PotentialModel, data_world: World, max_atoms: int = 16
) -> tuple[ModelGrads, np.ndarray, np.ndarray]:
    """Exact log-likelihood gradient: data-side minus enumerated expectation.

    Returns (gradients, data-side Phi, model-side Phi).  The beta slot of the
    gradient is exactly the residual between the two Phi vectors.
    """
    phi_data, g_data = weighted_expectation_grads(
        model, data_world.bits[None, :], np.ones(1)
    )
    phi_model, g_model, _ = exact_expectation_grads(model, max_atoms)
    g_data.axpy(-1.0, g_model)
    g_data.betas = phi_data - phi_model
    return g_data, phi_data, phi_model


def grad_step(
    model: PotentialModel,
    data_worlds: list[World],
    chains: _ChainPool | None,
    config: TrainConfig,
    optimizer: Optimizer | None = None,
    rng: np.random.Generator | None = None,
    epoch: int = 0,
    constraints=None,
) -> tuple[PotentialModel, GradientReport]:
    """One ascent update: noise the data, advance the chains, step the params."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    optimizer = optimizer if optimizer is not None else Optimizer(model, config)
    noisy = [apply_noise(w, config.pi_n, rng) for w in data_worlds]
    data_bits = np.stack([w.bits for w in noisy])
    b = data_bits.shape[0]

    fragments = None
    if (
        config.disconnected_per_connected is not None
        and model.embeddings is not None
        and not config.exact_expectations
    ):
        fragments = _fragment_subset(
            model, data_bits[0], config.disconnected_per_connected, rng
        )

    phi_data, g_data = weighted_expectation_grads(
        model, data_bits, np.full(b, 1.0 / b), fragments=fragments
    )

    if config.exact_expectations:
        phi_model, g_model, _ = exact_expectation_grads(model)
    else:
        if chains is None:
            chains = init_chains(data_worlds, config, rng)
        schedule = _training_schedule(model, noisy[0], config, rng)
        run = run_gibbs(
            model,
            chains.bits,
            chains.rng,
            sweeps=config.sweeps_per_update,
            schedule=schedule,
            constraints=constraints,
        )
        chains.bits = run.bits
        nc = chains.bits.shape[0]
        phi_model, g_model = weighted_expectation_grads(
            model, chains.bits, np.full(nc, 1.0 / nc), fragments=fragments
        )

    g_data.axpy(-1.0, g_model)
    g_data.betas = phi_data - phi_model
    _apply_freezes(model, g_data, config)

    report = GradientReport(
        epoch=epoch,
        data_phi=phi_data,
        model_phi=phi_model,
        beta_residuals=phi_data - phi_model,
        grad_norms=_grad_norms(g_data),
        data_score=float(phi_data @ model.betas),
    )
    for arr in g_data.arrays():
        if not np.isfinite(arr).all():
            raise TrainingError("non-finite gradient; aborting", report)

    norm = g_data.global_norm()
    if config.grad_clip and norm > config.grad_clip:
        g_data.scale(config.grad_clip / norm)
    optimizer.step(model, g_data)
    return model, report


def _training_schedule(model, world, config, rng):
    if config.schedule_mode == "sequential":
        return None
    if config.schedule_mode == "blocked" or (
        config.schedule_mode == "auto" and model.k <= 3
    ):
        pairs = None
        if config.neg_sample_rate is not None:
            pairs = select_pairs(world, config.neg_sample_rate, rng)
        return build_schedule(model.signature, model.k, pairs=pairs)
    return None


def train(
    data: list[World] | World,
    config: TrainConfig,
    model: PotentialModel | None = None,
    report_cb=None,
    checkpoint_cb=None,
    chain_cb=None,
    constraints=None,
) -> PotentialModel:
    """Run the configured number of epochs; one grad_step per epoch.

    Persistent chains carry across updates.  ``report_cb`` receives every
    GradientReport; ``checkpoint_cb(epoch, model)`` fires every
    ``checkpoint_every`` epochs when configured; ``chain_cb(epoch, bits)``
    sees the chain worlds after every update (generation collects these).
    ``constraints`` are exclusion blocks enforced while sampling.
    """
    data_worlds = [data] if isinstance(data, World) else list(data)
    if not data_worlds:
        raise ValueError("training data is empty")
    seq = np.random.SeedSequence(config.seed)
    noise_rng, chain_rng = (np.random.default_rng(s) for s in seq.spawn(2))
    if model is None:
        model = make_model(
            data_worlds[0].signature,
            config.k,
            hidden=config.hidden,
            heads=config.heads,
            activation=config.activation,
            embedding_dim=config.embedding_dim,
            indicators=config.indicators,
            rng=np.random.default_rng(seq.spawn(1)[0]),
        )
    optimizer = Optimizer(model, config)

    if config.exact_expectations and model.net is None and model.embeddings is None:
        return _train_exact_indicator(
            data_worlds, config, model, optimizer, noise_rng, report_cb
        )

    chains = None if config.exact_expectations else init_chains(
        data_worlds, config, chain_rng
    )
    for epoch in range(config.epochs):
        model, report = grad_step(
            model, data_worlds, chains, config, optimizer, noise_rng, epoch,
            constraints=constraints,
        )
        if report_cb is not None:
            report_cb(report)
        if chain_cb is not None and chains is not None:
            chain_cb(epoch, chains.bits)
        if (
            checkpoint_cb is not None
            and config.checkpoint_every
            and (epoch + 1) % config.checkpoint_every == 0
        ):
            checkpoint_cb(epoch, model)
    return model


def _train_exact_indicator(
    data_worlds, config, model, optimizer, rng, report_cb
) -> PotentialModel:
    """Exact-expectation training for indicator-only models.

    Global potentials do not depend on beta, so they are enumerated once and
    each step reduces to a softmax reweighting: the concave dual ascent on
    the statistic-matching constraints.
    """
    a = model.signature.n_atoms
    if a > DEFAULT_MAX_ATOMS:
        raise ValueError("exact training needs a tiny domain")
    total = 1 << a
    g_all = np.empty((total, model.n_potentials))
    block = 1 << 12
    for start in range(0, total, block):
        idx = np.arange(start, min(start + block, total))
        g_all[idx] = batched_global_potentials(model, bits_of_indices(idx, a))

    for epoch in range(config.epochs):
        noisy = [apply_noise(w, config.pi_n, rng) for w in data_worlds]
        phi_data = np.mean(
            [
                batched_global_potentials(model, w.bits[None, :])[0]
                for w in noisy
            ],
            axis=0,
        )
        scores = g_all @ model.betas
        scores -= scores.max()
        probs = np.exp(scores)
        probs /= probs.sum()
        phi_model = probs @ g_all
        grads = ModelGrads.zeros_like(model)
        grads.betas = phi_data - phi_model
        _apply_freezes(model, grads, config)
        report = GradientReport(
            epoch=epoch,
            data_phi=phi_data,
            model_phi=phi_model,
            beta_residuals=phi_data - phi_model,
            grad_norms=_grad_norms(grads),
            data_score=float(phi_data @ model.betas),
        )
        if report_cb is not None:
            report_cb(report)
        norm = grads.global_norm()
        if config.grad_clip and norm > config.grad_clip:
            grads.scale(config.grad_clip / norm)
        optimizer.step(model, grads)
    return model
