"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line with the measured quantity next to its pinned tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines.
"""

import filecmp
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest

from nmln.cli import main as cli_main
from nmln.gibbs import (
    apply_noise,
    build_schedule,
    estimate_marginals,
    exclusion_blocks_for_predicates,
    run_gibbs,
)
from nmln.kb import build_signature, load_kb
from nmln.oracle import (
    all_world_scores,
    bits_of_indices,
    distribution,
    exact_log_likelihood,
    exact_marginals,
    model_a_distribution,
)
from nmln.potentials import (
    IndicatorPotential,
    PotentialModel,
    general_potential,
    make_model,
    symmetric_potential,
)
from nmln.relational import Signature, World, restrict
from nmln.tasks import SamplerConfig, collect_generations, query_marginals
from nmln.training import TrainConfig, exact_grad, train

from conftest import permuted_world, random_world

DATA = Path(__file__).resolve().parent.parent / "src" / "nmln" / "data"

SIG_A = Signature(("a", "b"), (("p", 1), ("q", 1), ("r", 2)))  # 8 atoms
SIG_B = Signature(("a", "b", "c"), (("sm", 1), ("fr", 2)))  # 12 atoms
SIG_C = Signature(("a", "b", "c"), (("p", 1), ("q", 1)))  # 6 atoms
SIG_D = Signature(("a", "b", "c", "d"), (("u", 1), ("v", 1)))  # 8 atoms


def report(criterion: str, passed: bool, detail: str) -> None:
    print(f"{'PASS' if passed else 'FAIL'} {criterion}: {detail}")
    assert passed, f"{criterion}: {detail}"


def first_unary(sig):
    return next(name for name, arity in sig.predicates if arity == 1)


# -----------------------------------------------------------------------
# 1. Gradient correctness


def fd_worst_error(model, world, grads, h=1e-5):
    arrays = []
    if model.net is not None:
        for li, layer in enumerate(model.net.layers):
            arrays.append((layer.weights, grads.net[li][0]))
            arrays.append((layer.bias, grads.net[li][1]))
    arrays.append((model.betas, grads.betas))
    if model.embeddings is not None:
        arrays.append((model.embeddings.vectors, grads.embeddings))
    worst = 0.0
    for arr, g in arrays:
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            old = arr[ix]
            arr[ix] = old + h
            up = exact_log_likelihood(model, world)
            arr[ix] = old - h
            dn = exact_log_likelihood(model, world)
            arr[ix] = old
            fd = (up - dn) / (2 * h)
            denom = max(abs(g[ix]), abs(fd))
            worst = max(worst, abs(g[ix] - fd) / denom if denom > 1e-8 else abs(g[ix] - fd))
    return worst


GRAD_CONFIGS = [
    (SIG_B, 1, (4,), 2, "sigmoid", None), (SIG_B, 1, (4,), 1, "relu", None),
    (SIG_B, 1, (3,), 2, "sigmoid", 2),    (SIG_B, 2, (4,), 2, "sigmoid", None),
    (SIG_B, 2, (5,), 1, "relu", None),    (SIG_B, 2, (4,), 2, "sigmoid", 2),
    (SIG_B, 2, (3,), 1, "sigmoid", 3),    (SIG_B, 3, (4,), 2, "sigmoid", None),
    (SIG_B, 3, (3,), 1, "sigmoid", 2),    (SIG_A, 1, (4,), 2, "sigmoid", None),
    (SIG_A, 2, (4,), 2, "sigmoid", None), (SIG_A, 2, (4,), 1, "relu", None),
    (SIG_A, 2, (3,), 2, "sigmoid", 2),    (SIG_D, 2, (4,), 1, "sigmoid", None),
    (SIG_D, 3, (4,), 2, "sigmoid", None), (SIG_D, 3, (3,), 1, "sigmoid", 2),
    (SIG_D, 1, (4,), 1, "relu", None),    (SIG_C, 2, (4,), 2, "sigmoid", None),
    (SIG_C, 3, (4,), 1, "sigmoid", 2),    (SIG_C, 1, (3,), 2, "sigmoid", 3),
]


def test_criterion_1_gradient_correctness():
    start = time.time()
    worst = 0.0
    for i, (sig, k, hidden, heads, act, emb) in enumerate(GRAD_CONFIGS):
        rng = np.random.default_rng(100 + i)
        indicators = ()
        if i % 5 == 0:
            indicators = (IndicatorPotential.parse(f"{first_unary(sig)}(x1)", 0.8),)
        model = make_model(
            sig, k, hidden=hidden, heads=heads, activation=act,
            embedding_dim=emb, indicators=indicators, rng=rng,
        )
        world = random_world(sig, rng)
        grads, _, _ = exact_grad(model, world)
        worst = max(worst, fd_worst_error(model, world, grads))
    elapsed = time.time() - start
    report(
        "criterion 1 (gradient correctness, 20 models)",
        worst < 1e-4 and elapsed < 120,
        f"max relative error {worst:.2e} < 1e-4, runtime {elapsed:.0f}s < 120s",
    )


# -----------------------------------------------------------------------
# 2. Sampler-oracle agreement


SAMPLER_MODELS = [
    (SIG_A, 1), (SIG_A, 2), (SIG_A, 2), (SIG_A, 1), (SIG_B, 2),
    (SIG_B, 3), (SIG_B, 3), (SIG_C, 1), (SIG_C, 2), (SIG_C, 3),
]


def restricted_marginals(model, blocks):
    sig = model.signature
    a = sig.n_atoms
    scores = all_world_scores(model)
    bits = bits_of_indices(np.arange(1 << a), a)
    legal = np.ones(1 << a, dtype=bool)
    for b in blocks:
        count = bits[:, list(b.atoms)].sum(axis=1)
        legal &= count == 1 if b.rule == "exactly-one" else count <= 1
    weights = np.where(legal, np.exp(scores - scores[legal].max()), 0.0)
    weights /= weights.sum()
    return bits.T.astype(float) @ weights


def test_criterion_2_sampler_oracle_agreement():
    start = time.time()
    kept_budget = dict(chains=100, burn_in=300, sweeps=1000)  # 100k kept sweeps
    worst = {"sequential": 0.0, "blocked-k2": 0.0, "blocked-k3": 0.0, "constrained": 0.0}
    for i, (sig, k) in enumerate(SAMPLER_MODELS):
        rng = np.random.default_rng(200 + i)
        model = make_model(sig, k, hidden=(5,), heads=2, rng=rng)
        model.betas[:] = rng.uniform(1.0, 2.0, size=model.betas.shape)
        exact = exact_marginals(model)

        est = estimate_marginals(model, seed=1000 + i, **kept_budget)
        worst["sequential"] = max(worst["sequential"], np.abs(est - exact).max())

        if k <= 2:
            sched = build_schedule(sig, 2)
            est = estimate_marginals(model, seed=2000 + i, schedule=sched, **kept_budget)
            worst["blocked-k2"] = max(worst["blocked-k2"], np.abs(est - exact).max())

        sched = build_schedule(sig, 3)
        est = estimate_marginals(model, seed=3000 + i, schedule=sched, **kept_budget)
        worst["blocked-k3"] = max(worst["blocked-k3"], np.abs(est - exact).max())

        unaries = [n for n, arity in sig.predicates if arity == 1]
        blocks = exclusion_blocks_for_predicates(sig, unaries, "exactly-one")
        exact_r = restricted_marginals(model, blocks)
        est = estimate_marginals(
            model, seed=4000 + i, constraints=blocks, **kept_budget
        )
        worst["constrained"] = max(worst["constrained"], np.abs(est - exact_r).max())
    elapsed = time.time() - start
    detail = ", ".join(f"{k} {v:.4f}" for k, v in worst.items())
    report(
        "criterion 2 (sampler-oracle agreement, 100k kept sweeps)",
        max(worst.values()) < 0.02 and elapsed < 300,
        f"max abs marginal error per mode: {detail} (< 0.02), runtime {elapsed:.0f}s < 300s",
    )


# -----------------------------------------------------------------------
# 3. Weighted-rule equivalence


RULESETS = [
    [("sm(x1) & fr(x1,x2) -> sm(x2)", 2.0)],
    [("fr(x1,x2) -> fr(x2,x1)", 1.5), ("sm(x1)", -0.7)],
    [("~fr(x1,x1)", 3.0)],
    [("fr(x1,x2) & fr(x2,x3) -> fr(x1,x3)", 1.2)],
    [("sm(x1) | sm(x2)", 0.5), ("fr(x1,x2) & ~fr(x2,x1)", -1.0)],
]


def test_criterion_3_rule_model_equivalence():
    worst = 0.0
    for rules_text in RULESETS:
        rules = [IndicatorPotential.parse(t, w) for t, w in rules_text]
        k = max(2, max(v for r in rules for a in _atoms(r.formula) for v in a.vars))
        model = PotentialModel(
            signature=SIG_B, k=k, net=None,
            betas=np.ones(len(rules)), indicators=tuple(rules),
        )
        via_potentials = distribution(model)
        via_rules = model_a_distribution(rules, k, SIG_B)
        worst = max(worst, np.abs(via_potentials - via_rules).max())
    report(
        "criterion 3 (weighted-rule equivalence, 5 rulesets)",
        worst < 1e-9,
        f"max per-world probability gap {worst:.2e} < 1e-9",
    )


def _atoms(formula):
    from nmln.logic import iter_atoms

    return list(iter_atoms(formula))


# -----------------------------------------------------------------------
# 4. Symmetry suite


def test_criterion_4_symmetry_suite():
    rng = np.random.default_rng(4)
    model = make_model(SIG_B, 2, hidden=(6,), heads=3, rng=rng)
    worst_frag = 0.0
    perms = list(itertools.permutations(range(3)))
    for _ in range(100):
        world = random_world(SIG_B, rng)
        subset = tuple(sorted(rng.choice(3, size=2, replace=False)))
        perm = dict(enumerate(perms[rng.integers(len(perms))]))
        image_world = permuted_world(world, perm)
        image_subset = tuple(sorted(perm[c] for c in subset))
        a = symmetric_potential(restrict(world, subset), model)
        b = symmetric_potential(restrict(image_world, image_subset), model)
        worst_frag = max(worst_frag, np.abs(a - b).max())

    probs = distribution(model)
    worst_world = 0.0
    for _ in range(50):
        world = random_world(SIG_B, rng)
        from nmln.oracle import index_of_world

        for perm_tuple in perms:
            image = permuted_world(world, dict(enumerate(perm_tuple)))
            worst_world = max(
                worst_world,
                abs(probs[index_of_world(world)] - probs[index_of_world(image)]),
            )

    emb_model = make_model(SIG_B, 2, hidden=(6,), heads=2, embedding_dim=3, rng=rng)
    shared = rng.normal(size=3)
    emb_model.embeddings.vectors[:] = shared
    worst_emb = 0.0
    from nmln.network import net_forward
    from nmln.relational import anonymize

    for _ in range(20):
        world = random_world(SIG_B, rng)
        for subset in itertools.combinations(range(3), 2):
            frag = restrict(world, subset)
            manual = sum(
                net_forward(
                    emb_model.net,
                    np.concatenate([c.code.astype(float), shared, shared]),
                )[0]
                for c in anonymize(frag)
            )
            worst_emb = max(
                worst_emb, np.abs(general_potential(frag, emb_model) - manual).max()
            )
    report(
        "criterion 4 (symmetry suite)",
        worst_frag <= 1e-12 and worst_world <= 1e-12 and worst_emb <= 1e-9,
        f"fragment gap {worst_frag:.1e} <= 1e-12, world-probability gap "
        f"{worst_world:.1e} <= 1e-12, equal-embedding gap {worst_emb:.1e} <= 1e-9",
    )


# -----------------------------------------------------------------------
# 5. Max-entropy constraint recovery


def test_criterion_5_constraint_recovery():
    sig = SIG_B
    rng = np.random.default_rng(5)
    world = random_world(sig, rng, density=0.45)
    indicators = (
        IndicatorPotential.parse("sm(x1) & fr(x1,x2) -> sm(x2)", 1.0),
        IndicatorPotential.parse("fr(x1,x2) -> fr(x2,x1)", 1.0),
        IndicatorPotential.parse("sm(x1)", 1.0),
        IndicatorPotential.parse("fr(x1,x2)", 1.0),
    )
    model = PotentialModel(
        signature=sig, k=2, net=None, betas=np.zeros(4), indicators=indicators
    )
    config = TrainConfig(
        epochs=5000, learning_rate=0.1, optimizer="adam", pi_n=0.0,
        exact_expectations=True, grad_clip=0.0, seed=0,
    )
    reports = []
    train(world, config, model=model, report_cb=reports.append)
    final = np.abs(reports[-1].beta_residuals).max()
    report(
        "criterion 5 (max-entropy constraint recovery)",
        final < 0.01,
        f"max |data statistic - model expectation| {final:.2e} < 0.01 "
        f"after {len(reports)} exact-gradient steps",
    )


# -----------------------------------------------------------------------
# 6. Toy social-network behavioral reproduction


def test_criterion_6_smokers_symmetry_completion():
    start = time.time()
    sig = build_signature(DATA / "smokers_signature.txt", [DATA / "smokers_world.txt"])
    kb = load_kb(DATA / "smokers_world.txt", sig)
    n = sig.n_constants
    given = {
        sig.atom_of_index(i)[1]
        for i in range(sig.n_atoms)
        if kb.bits[i] and sig.atom_of_index(i)[0] == "fr"
    }
    one_directional = [(x, y) for (x, y) in given if (y, x) not in given]
    absent = [
        (x, y)
        for x in range(n)
        for y in range(n)
        if x != y and (x, y) not in given and (y, x) not in given
    ]
    assert one_directional and absent

    wins = 0
    for seed in range(10):
        config = TrainConfig(
            epochs=250, learning_rate=0.01, optimizer="adam", pi_n=0.0,
            chains=10, sweeps_per_update=2, seed=seed, k=3,
            hidden=(30,), heads=2, activation="sigmoid",
        )
        model = train(kb, config)
        queries = [i for i in range(sig.n_atoms) if not kb.bits[i]]
        sampler = SamplerConfig(
            mode="blocked", chains=10, burn_in=300, sweeps=700, seed=seed
        )
        marg = dict(zip(queries, query_marginals(model, kb, queries, sampler)))
        ceiling = max(marg[sig.atom_index("fr", p)] for p in absent)
        wins += all(
            marg[sig.atom_index("fr", (y, x))] > ceiling for (x, y) in one_directional
        )
    elapsed = time.time() - start
    report(
        "criterion 6 (friendship symmetry completion)",
        wins >= 9 and elapsed < 600,
        f"reverse edge outranks every absent pair in {wins}/10 seeds (>= 9), "
        f"runtime {elapsed:.0f}s < 600s",
    )


# -----------------------------------------------------------------------
# 7. Noise contract


def test_criterion_7_noise_contract():
    sig = Signature(tuple(f"c{i}" for i in range(100)), (("r", 2),))
    world = World.empty(sig)
    worst_z = 0.0
    for j, pi in enumerate((0.01, 0.1, 0.5)):
        out = apply_noise(world, pi, np.random.default_rng(70 + j))
        frac = out.bits.mean()
        half_width = 2.576 * math.sqrt(pi * (1 - pi) / sig.n_atoms)
        worst_z = max(worst_z, abs(frac - pi) / half_width)
    report(
        "criterion 7 (noise contract)",
        worst_z <= 1.0,
        f"worst flip-fraction deviation {worst_z:.2f}x the binomial 99% half-width",
    )


# -----------------------------------------------------------------------
# 8. Schedule correctness


def test_criterion_8_schedule_correctness():
    ok = True
    details = []
    for n in range(2, 10):
        sig = Signature(tuple(f"c{i}" for i in range(n)), (("s", 1), ("r", 2)))
        sched = build_schedule(sig, 3)
        pair_groups = sched.groups[1:]
        expected = n - 1 if n % 2 == 0 else n
        ok &= len(pair_groups) == expected
        seen = []
        for group in pair_groups:
            used = set()
            for block in group:
                consts = {
                    c for atom in block for c in sig.atom_of_index(atom)[1]
                }
                ok &= len(consts) == 2 and not (consts & used)
                used |= consts
                seen.append(tuple(sorted(consts)))
        ok &= sorted(seen) == sorted(itertools.combinations(range(n), 2))
        details.append(f"n={n}:{len(pair_groups)}")
    report(
        "criterion 8 (blocked schedule correctness)",
        ok,
        f"group counts {' '.join(details)}; pairs disjoint per group, covered once",
    )


# -----------------------------------------------------------------------
# 9. Generation plumbing


def test_criterion_9_generation_plumbing():
    sig = Signature(("a",), (("p", 1), ("q", 1)))
    model = PotentialModel(signature=sig, k=1, net=None, betas=np.zeros(0))
    snapshots = []
    run_gibbs(
        model,
        np.zeros((20, 2), dtype=np.uint8),
        np.random.default_rng(9),
        sweeps=200,
        burn_in=20,
        snapshot_cb=lambda bits: snapshots.append(bits.copy()),
    )
    top = collect_generations(snapshots, sig, top_n=4)
    total = sum(c for c, _ in top)
    expected = total / 4
    sigma = math.sqrt(total * 0.25 * 0.75)
    deviations = [abs(c - expected) / sigma for c, _ in top]
    uniform_ok = len(top) == 4 and max(deviations) <= 3.0

    merge_sig = Signature(("a", "b"), (("sm", 1),))
    w_a = World.from_atoms(merge_sig, [("sm", ("a",))])
    w_b = World.from_atoms(merge_sig, [("sm", ("b",))])
    merged = collect_generations([w_a.bits, w_b.bits], merge_sig, top_n=4)
    merge_ok = len(merged) == 1 and merged[0][0] == 2
    report(
        "criterion 9 (generation plumbing)",
        uniform_ok and merge_ok,
        f"4 structures, worst deviation {max(deviations):.2f} sigma <= 3; "
        f"isomorphic snapshots merged into one entry of count 2",
    )


# -----------------------------------------------------------------------
# 10. Determinism of every subcommand


def _compare_trees(a: Path, b: Path) -> list[str]:
    diffs = []
    for sub in ("metrics", "samples"):
        files_a = sorted(p.relative_to(a) for p in (a / sub).rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(b) for p in (b / sub).rglob("*") if p.is_file())
        if files_a != files_b:
            diffs.append(f"{sub}: file lists differ")
            continue
        for rel in files_a:
            if not filecmp.cmp(a / rel, b / rel, shallow=False):
                diffs.append(str(rel))
    return diffs


def test_criterion_10_subcommand_determinism(tmp_path):
    sig = tmp_path / "sig.txt"
    sig.write_text("sm/1\nfr/2\na\nb\nc\n")
    kb = tmp_path / "kb.txt"
    kb.write_text("sm(a)\nfr(a,b)\nfr(b,a)\n")
    test_file = tmp_path / "test.txt"
    test_file.write_text("fr(b,c)\n")
    valid = tmp_path / "valid.txt"
    valid.write_text("fr(a,b) 1\nfr(a,c) 0\n")
    ltest = tmp_path / "ltest.txt"
    ltest.write_text("fr(b,a) 1\nfr(c,b) 0\n")

    model_dir = tmp_path / "m"
    assert cli_main([
        "train", "--signature", str(sig), "--kb", str(kb),
        "--out", str(model_dir), "--seed", "3", "--epochs", "6",
        "--k", "2", "--hidden", "5", "--lr", "0.01",
    ]) == 0
    model = str(model_dir / "model" / "model.json")

    commands = {
        "train": ["train", "--signature", str(sig), "--kb", str(kb),
                  "--seed", "3", "--epochs", "6", "--k", "2", "--hidden", "5"],
        "complete": ["complete", "--signature", str(sig), "--kb", str(kb),
                     "--test", str(test_file), "--model", model, "--seed", "5",
                     "--chains", "4", "--burn-in", "10", "--sweeps", "30"],
        "classify": ["classify", "--signature", str(sig), "--kb", str(kb),
                     "--valid", str(valid), "--test", str(ltest), "--model", model,
                     "--seed", "5", "--chains", "4", "--burn-in", "10",
                     "--sweeps", "30"],
        "generate": ["generate", "--signature", str(sig), "--kb", str(kb),
                     "--seed", "7", "--epochs", "6", "--k", "2", "--hidden", "5",
                     "--top-n", "3"],
        "oracle": ["oracle", "--signature", str(sig), "--model", model,
                   "--seed", "1", "--full-distribution"],
        "eval": ["eval", "--signature", str(sig), "--kb", str(kb),
                 "--model", model, "--seed", "1"],
    }
    failures = []
    for name, args in commands.items():
        outs = []
        for run_index in (1, 2):
            out = tmp_path / f"{name}{run_index}"
            code = cli_main(args + ["--out", str(out)])
            if code != 0:
                failures.append(f"{name}: exit {code}")
                break
            outs.append(out)
        else:
            diffs = _compare_trees(*outs)
            if diffs:
                failures.append(f"{name}: {diffs}")
    report(
        "criterion 10 (subcommand determinism)",
        not failures,
        "byte-identical metric and sample outputs across reruns of all six "
        f"subcommands{'' if not failures else ': ' + '; '.join(failures)}",
    )
