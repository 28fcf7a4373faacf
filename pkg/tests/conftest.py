import numpy as np
import pytest

from nmln.relational import Signature, World


@pytest.fixture
def smokers_sig():
    """Two-predicate signature in the order that fixes the code layout."""
    return Signature(("1", "2"), (("fr", 2), ("sm", 1)))


@pytest.fixture
def people_sig():
    return Signature(("Alice", "Bob", "Eve"), (("sm", 1), ("fr", 2)))


@pytest.fixture
def people_world(people_sig):
    return World.from_atoms(
        people_sig,
        [
            ("sm", ("Alice",)),
            ("fr", ("Alice", "Bob")),
            ("fr", ("Bob", "Eve")),
        ],
    )


def random_world(signature, rng, density=0.5):
    return World(
        signature, (rng.random(signature.n_atoms) < density).astype(np.uint8)
    )


def permuted_world(world, perm):
    """Rename constant i to perm[i] everywhere; the isomorphic image."""
    sig = world.signature
    bits = np.zeros_like(world.bits)
    for idx in range(sig.n_atoms):
        pred, args = sig.atom_of_index(idx)
        new = sig.atom_index(pred, tuple(perm[a] for a in args))
        bits[new] = world.bits[idx]
    return World(sig, bits)
