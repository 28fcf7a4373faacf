"""Signatures, possible worlds, fragments and their anonymized binary codes.

A signature fixes a universe of ground atoms: every predicate applied to
every argument tuple over the constant pool, in a canonical order
(predicates in declaration order, argument tuples row-major).  A world is a
truth assignment over that universe, stored as a bit array.  A fragment is
the restriction of a world to k constants; its k! anonymizations are the
binary codes fed to the potential networks.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

MAX_ARITY = 2


class SignatureError(ValueError):
    """Raised for malformed signatures or constant/predicate mismatches."""


@dataclass(frozen=True)
class Signature:
    """Ordered constants and predicates; defines the ground-atom universe."""

    constants: tuple[str, ...]
    predicates: tuple[tuple[str, int], ...]

    def __post_init__(self):
        if len(set(self.constants)) != len(self.constants):
            raise SignatureError("duplicate constant names")
        names = [p for p, _ in self.predicates]
        if len(set(names)) != len(names):
            raise SignatureError("duplicate predicate names")
        for name, arity in self.predicates:
            if not 1 <= arity <= MAX_ARITY:
                raise SignatureError(
                    f"predicate {name}/{arity}: arity must be in 1..{MAX_ARITY}"
                )

    @property
    def n_constants(self) -> int:
        return len(self.constants)

    @property
    def n_atoms(self) -> int:
        n = self.n_constants
        return sum(n**arity for _, arity in self.predicates)

    def constant_id(self, name: str) -> int:
        try:
            return self._const_ids[name]
        except KeyError:
            raise SignatureError(f"unknown constant {name!r}") from None

    def predicate_arity(self, name: str) -> int:
        try:
            return self._pred_arity[name]
        except KeyError:
            raise SignatureError(f"unknown predicate {name!r}") from None

    @property
    def _const_ids(self) -> dict[str, int]:
        ids = self.__dict__.get("_const_ids_cache")
        if ids is None:
            ids = {c: i for i, c in enumerate(self.constants)}
            self.__dict__["_const_ids_cache"] = ids
        return ids

    @property
    def _pred_arity(self) -> dict[str, int]:
        table = self.__dict__.get("_pred_arity_cache")
        if table is None:
            table = dict(self.predicates)
            self.__dict__["_pred_arity_cache"] = table
        return table

    def atom_index(self, pred: str, args: tuple[int, ...]) -> int:
        """Index of a ground atom (constant ids) in the canonical order."""
        n = self.n_constants
        offset = 0
        for name, arity in self.predicates:
            if name == pred:
                if len(args) != arity:
                    raise SignatureError(
                        f"{pred}/{arity} applied to {len(args)} arguments"
                    )
                idx = 0
                for a in args:
                    if not 0 <= a < n:
                        raise SignatureError(f"constant id {a} out of range")
                    idx = idx * n + a
                return offset + idx
            offset += n**arity
        raise SignatureError(f"unknown predicate {pred!r}")

    def atom_of_index(self, index: int) -> tuple[str, tuple[int, ...]]:
        """Inverse of :meth:`atom_index`."""
        n = self.n_constants
        offset = 0
        for name, arity in self.predicates:
            block = n**arity
            if index < offset + block:
                rem = index - offset
                args = []
                for _ in range(arity):
                    args.append(rem % n)
                    rem //= n
                return name, tuple(reversed(args))
            offset += block
        raise SignatureError(f"atom index {index} out of range")

    def atom_label(self, index: int) -> str:
        pred, args = self.atom_of_index(index)
        return f"{pred}({','.join(self.constants[a] for a in args)})"


def canonical_atom_order(
    signature: Signature, constant_pool: tuple[str, ...]
) -> list[tuple[str, tuple[str, ...]]]:
    """All ground atoms of the signature's predicates over a constant pool.

    Predicates appear in declaration order; argument tuples in row-major
    order over the pool.  The pool may differ from the signature's own
    constants (anonymized codes use the pool 1..k).
    """
    atoms: list[tuple[str, tuple[str, ...]]] = []
    for name, arity in signature.predicates:
        for args in itertools.product(constant_pool, repeat=arity):
            atoms.append((name, args))
    return atoms


@dataclass(frozen=True, eq=False)
class World:
    """A truth assignment to every ground atom of a signature."""

    signature: Signature
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.shape != (self.signature.n_atoms,):
            raise SignatureError(
                f"world has {bits.shape} truth bits, signature defines "
                f"{self.signature.n_atoms} atoms"
            )
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)

    @classmethod
    def empty(cls, signature: Signature) -> "World":
        return cls(signature, np.zeros(signature.n_atoms, dtype=np.uint8))

    @classmethod
    def from_atoms(
        cls, signature: Signature, atoms: list[tuple[str, tuple[str, ...]]]
    ) -> "World":
        bits = np.zeros(signature.n_atoms, dtype=np.uint8)
        for pred, args in atoms:
            ids = tuple(signature.constant_id(a) for a in args)
            bits[signature.atom_index(pred, ids)] = 1
        return cls(signature, bits)

    def with_bit(self, index: int, value: int) -> "World":
        bits = self.bits.copy()
        bits[index] = 1 if value else 0
        return World(self.signature, bits)

    def true_atoms(self) -> list[str]:
        return [self.signature.atom_label(i) for i in np.flatnonzero(self.bits)]


@dataclass(frozen=True, eq=False)
class Fragment:
    """Restriction of a world to an ordered k-subset of constant ids."""

    world: World
    constants: tuple[int, ...]

    def __post_init__(self):
        n = self.world.signature.n_constants
        if len(set(self.constants)) != len(self.constants):
            raise SignatureError("fragment constants must be distinct")
        for c in self.constants:
            if not 0 <= c < n:
                raise SignatureError(f"constant id {c} not in the world")

    @property
    def k(self) -> int:
        return len(self.constants)

    def atoms(self) -> dict[tuple[str, tuple[int, ...]], bool]:
        """All induced atoms over the fragment's constants, with truth values."""
        sig = self.world.signature
        out: dict[tuple[str, tuple[int, ...]], bool] = {}
        for name, arity in sig.predicates:
            for args in itertools.product(self.constants, repeat=arity):
                out[(name, args)] = bool(self.world.bits[sig.atom_index(name, args)])
        return out

    def true_atom_labels(self) -> set[str]:
        sig = self.world.signature
        return {
            f"{p}({','.join(sig.constants[a] for a in args)})"
            for (p, args), v in self.atoms().items()
            if v
        }


@dataclass(frozen=True, eq=False)
class AnonCode:
    """One anonymization of a fragment: a binary code plus its bijection.

    ``mapping[i]`` is the anonymized name (1-based) assigned to
    ``fragment.constants[i]``.  The code indexes atoms over the pool
    ``("1", ..., "k")`` in canonical order.
    """

    fragment: Fragment
    mapping: tuple[int, ...]
    code: np.ndarray = field(repr=False)

    def decode(self) -> dict[tuple[str, tuple[int, ...]], bool]:
        """Reconstruct the fragment's induced atoms via the inverse mapping."""
        sig = self.fragment.world.signature
        inverse = {anon: orig for orig, anon in zip(self.fragment.constants, self.mapping)}
        pool = tuple(str(j) for j in range(1, self.fragment.k + 1))
        atoms = canonical_atom_order(sig, pool)
        out: dict[tuple[str, tuple[int, ...]], bool] = {}
        for bit, (pred, args) in zip(self.code, atoms):
            orig_args = tuple(inverse[int(a)] for a in args)
            out[(pred, orig_args)] = bool(bit)
        return out


def code_length(signature: Signature, k: int) -> int:
    return sum(k**arity for _, arity in signature.predicates)


def restrict(world: World, constants: tuple[str, ...] | tuple[int, ...]) -> Fragment:
    """Fragment of a world induced by the given constants (names or ids)."""
    sig = world.signature
    ids = tuple(
        sig.constant_id(c) if isinstance(c, str) else int(c) for c in constants
    )
    return Fragment(world, ids)


def enumerate_fragments(world: World, k: int):
    """Yield the C(n, k) fragments of a world in lexicographic subset order."""
    n = world.signature.n_constants
    if not 1 <= k <= n:
        raise ValueError(f"fragment size k={k} must be in 1..{n}")
    for subset in itertools.combinations(range(n), k):
        yield Fragment(world, subset)


def anonymize(fragment: Fragment) -> list[AnonCode]:
    """All k! anonymized codes of a fragment.

    Permutations are enumerated in lexicographic order of the anonymized
    images, so downstream potential sums are reproducible bit for bit.
    """
    space = FragmentSpace(fragment.world.signature, fragment.k)
    bits = fragment.world.bits
    codes = []
    for p, perm in enumerate(space.perms):
        gather = space.subset_gather(fragment.constants, p)
        codes.append(AnonCode(fragment, perm, bits[gather].copy()))
    return codes


def isomorphic(a: Fragment, b: Fragment) -> bool:
    """True iff some bijective constant renaming maps one fragment onto the other."""
    if a.k != b.k:
        raise ValueError(f"fragment sizes differ: {a.k} vs {b.k}")
    if a.world.signature.predicates != b.world.signature.predicates:
        raise SignatureError("fragments come from incompatible signatures")
    codes_a = sorted(tuple(c.code.tolist()) for c in anonymize(a))
    codes_b = sorted(tuple(c.code.tolist()) for c in anonymize(b))
    return codes_a == codes_b


class FragmentSpace:
    """Precomputed index arrays for all (fragment, anonymization) pairs.

    For a signature and fragment size k this caches, per permutation, the
    map from code positions to world atom indices.  Stacking the maps for
    every size-k subset gives a single gather matrix ``gather`` of shape
    (C(n,k) * k!, L): ``world.bits[gather]`` is the full batch of anonymized
    codes of the world, rows ordered by (subset, permutation).
    """

    def __init__(self, signature: Signature, k: int):
        n = signature.n_constants
        if not 1 <= k <= n:
            raise ValueError(f"fragment size k={k} must be in 1..{n}")
        self.signature = signature
        self.k = k
        self.length = code_length(signature, k)
        self.perms = list(itertools.permutations(range(1, k + 1)))
        self.subsets = list(itertools.combinations(range(n), k))
        self.subset_index = {s: i for i, s in enumerate(self.subsets)}
        self.n_fragments = len(self.subsets)
        self.rows_per_fragment = len(self.perms)

        # anon_atoms[l] = (pred, anon args 1-based) at code position l
        pool = tuple(range(1, k + 1))
        self.anon_atoms: list[tuple[str, tuple[int, ...]]] = []
        for name, arity in signature.predicates:
            for args in itertools.product(pool, repeat=arity):
                self.anon_atoms.append((name, args))

        gather = np.empty(
            (self.n_fragments * self.rows_per_fragment, self.length), dtype=np.int64
        )
        row_consts = np.empty(
            (self.n_fragments * self.rows_per_fragment, k), dtype=np.int64
        )
        row = 0
        for subset in self.subsets:
            for p in range(len(self.perms)):
                gather[row] = self.subset_gather(subset, p)
                inverse = self._inverse(subset, p)
                row_consts[row] = [inverse[j] for j in range(1, k + 1)]
                row += 1
        self.gather = gather
        # row_consts[r, j-1] = original constant id mapped to anonymized name j
        self.row_consts = row_consts
        self.frag_of_row = np.repeat(
            np.arange(self.n_fragments), self.rows_per_fragment
        )

        # Per world atom: rows whose code contains it, and at which position.
        order = np.argsort(gather.ravel(), kind="stable")
        flat_rows = order // self.length
        flat_cols = order % self.length
        atom_ids = gather.ravel()[order]
        bounds = np.searchsorted(atom_ids, np.arange(signature.n_atoms + 1))
        self._atom_rows = [
            flat_rows[bounds[i] : bounds[i + 1]] for i in range(signature.n_atoms)
        ]
        self._atom_cols = [
            flat_cols[bounds[i] : bounds[i + 1]] for i in range(signature.n_atoms)
        ]

    def _inverse(self, subset: tuple[int, ...], perm_index: int) -> dict[int, int]:
        perm = self.perms[perm_index]
        return {anon: orig for orig, anon in zip(subset, perm)}

    def subset_gather(self, subset: tuple[int, ...], perm_index: int) -> np.ndarray:
        """World atom index for each code position, for one (subset, perm)."""
        sig = self.signature
        inverse = self._inverse(subset, perm_index)
        out = np.empty(self.length, dtype=np.int64)
        for l, (pred, args) in enumerate(self.anon_atoms):
            out[l] = sig.atom_index(pred, tuple(inverse[a] for a in args))
        return out

    def affected_rows(self, atom_index: int) -> tuple[np.ndarray, np.ndarray]:
        """(rows, code columns) of every anonymization containing the atom."""
        return self._atom_rows[atom_index], self._atom_cols[atom_index]

    def codes(self, bits: np.ndarray) -> np.ndarray:
        """Anonymized codes of one world (A,) or a batch (..., A).

        Returns shape (..., n_fragments * k!, L).
        """
        return np.asarray(bits, dtype=np.uint8)[..., self.gather]


_SPACE_CACHE: dict[tuple[Signature, int], FragmentSpace] = {}


def fragment_space(signature: Signature, k: int) -> FragmentSpace:
    """Memoized FragmentSpace; signatures hash by value."""
    key = (signature, k)
    space = _SPACE_CACHE.get(key)
    if space is None:
        space = FragmentSpace(signature, k)
        _SPACE_CACHE[key] = space
    return space
