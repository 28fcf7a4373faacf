"""Quantifier-free formulas over fragment variables x1..xk.

Used by indicator potentials: a formula is parsed once, then evaluated
either on anonymized binary codes (the potential-engine route) or directly
on a world under an explicit variable-to-constant assignment (the
brute-force route).  Connectives: ``~`` ``&`` ``|`` ``->`` with the usual
precedence; unicode forms are accepted too.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass

import numpy as np


class FormulaError(ValueError):
    """Raised for unparsable or out-of-scope formulas."""


@dataclass(frozen=True)
class Atom:
    pred: str
    vars: tuple[int, ...]  # 1-based variable indices

    def __str__(self):
        return f"{self.pred}({','.join(f'x{v}' for v in self.vars)})"


@dataclass(frozen=True)
class Not:
    arg: "Formula"

    def __str__(self):
        return f"~{_wrap(self.arg)}"


@dataclass(frozen=True)
class And:
    left: "Formula"
    right: "Formula"

    def __str__(self):
        return f"{_wrap(self.left)} & {_wrap(self.right)}"


@dataclass(frozen=True)
class Or:
    left: "Formula"
    right: "Formula"

    def __str__(self):
        return f"{_wrap(self.left)} | {_wrap(self.right)}"


@dataclass(frozen=True)
class Implies:
    left: "Formula"
    right: "Formula"

    def __str__(self):
        return f"{_wrap(self.left)} -> {_wrap(self.right)}"


Formula = Atom | Not | And | Or | Implies


def _wrap(f: Formula) -> str:
    return str(f) if isinstance(f, (Atom, Not)) else f"({f})"


_TOKEN = re.compile(
    r"\s*(?:(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<lp>\()|(?P<rp>\))|(?P<comma>,)"
    r"|(?P<not>[~!¬])|(?P<and>[&∧])|(?P<or>[|∨])"
    r"|(?P<implies>->|→))"
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            if text[pos:].strip() == "":
                break
            raise FormulaError(f"cannot tokenize formula at: {text[pos:]!r}")
        pos = m.end()
        for kind, value in m.groupdict().items():
            if value is not None:
                tokens.append((kind, value))
                break
    return tokens


class _Parser:
    """Recursive descent; precedence ~ > & > | > -> (-> right-associative)."""

    def __init__(self, tokens: list[tuple[str, str]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos][0] if self.pos < len(self.tokens) else None

    def take(self, kind: str) -> str:
        if self.peek() != kind:
            raise FormulaError(f"expected {kind}, got {self.peek()}")
        value = self.tokens[self.pos][1]
        self.pos += 1
        return value

    def parse(self) -> Formula:
        f = self.implication()
        if self.pos != len(self.tokens):
            raise FormulaError("trailing tokens after formula")
        return f

    def implication(self) -> Formula:
        left = self.disjunction()
        if self.peek() == "implies":
            self.take("implies")
            return Implies(left, self.implication())
        return left

    def disjunction(self) -> Formula:
        f = self.conjunction()
        while self.peek() == "or":
            self.take("or")
            f = Or(f, self.conjunction())
        return f

    def conjunction(self) -> Formula:
        f = self.negation()
        while self.peek() == "and":
            self.take("and")
            f = And(f, self.negation())
        return f

    def negation(self) -> Formula:
        if self.peek() == "not":
            self.take("not")
            return Not(self.negation())
        return self.atom()

    def atom(self) -> Formula:
        if self.peek() == "lp":
            self.take("lp")
            f = self.implication()
            self.take("rp")
            return f
        pred = self.take("name")
        self.take("lp")
        vars_: list[int] = []
        while True:
            vars_.append(_var_index(self.take("name")))
            if self.peek() == "comma":
                self.take("comma")
            else:
                break
        self.take("rp")
        return Atom(pred, tuple(vars_))


def _var_index(name: str) -> int:
    m = re.fullmatch(r"x(\d+)", name)
    if m is None or int(m.group(1)) < 1:
        raise FormulaError(f"arguments must be variables x1, x2, ...; got {name!r}")
    return int(m.group(1))


def parse_formula(text: str) -> Formula:
    return _Parser(_tokenize(text)).parse()


def max_variable(formula: Formula) -> int:
    if isinstance(formula, Atom):
        return max(formula.vars)
    if isinstance(formula, Not):
        return max_variable(formula.arg)
    return max(max_variable(formula.left), max_variable(formula.right))


def validate_formula(formula: Formula, signature, k: int) -> None:
    """Check arities against a signature and variable scope against k."""
    if max_variable(formula) > k:
        raise FormulaError(
            f"formula uses x{max_variable(formula)} but fragments have k={k}"
        )
    for atom in iter_atoms(formula):
        arity = signature.predicate_arity(atom.pred)
        if arity != len(atom.vars):
            raise FormulaError(
                f"{atom.pred}/{arity} applied to {len(atom.vars)} arguments"
            )


def iter_atoms(formula: Formula):
    if isinstance(formula, Atom):
        yield formula
    elif isinstance(formula, Not):
        yield from iter_atoms(formula.arg)
    else:
        yield from iter_atoms(formula.left)
        yield from iter_atoms(formula.right)


def compile_on_code(formula: Formula, space) -> "np.ufunc":
    """Closed evaluation over anonymized constants 1..k against code arrays.

    Variable xj is read as the anonymized constant j, so the formula becomes
    a boolean function of the code bits.  Returns a function mapping codes of
    shape (..., L) to booleans of shape (...).
    """
    positions = {atom: l for l, atom in enumerate(space.anon_atoms)}

    def build(f: Formula):
        if isinstance(f, Atom):
            key = (f.pred, f.vars)
            if key not in positions:
                raise FormulaError(f"atom {f} not expressible in k={space.k} codes")
            col = positions[key]
            return lambda codes: codes[..., col].astype(bool)
        if isinstance(f, Not):
            sub = build(f.arg)
            return lambda codes: ~sub(codes)
        if isinstance(f, And):
            lhs, rhs = build(f.left), build(f.right)
            return lambda codes: lhs(codes) & rhs(codes)
        if isinstance(f, Or):
            lhs, rhs = build(f.left), build(f.right)
            return lambda codes: lhs(codes) | rhs(codes)
        lhs, rhs = build(f.left), build(f.right)
        return lambda codes: ~lhs(codes) | rhs(codes)

    return build(formula)


def eval_under_assignment(formula: Formula, world, assignment: dict[int, int]) -> bool:
    """Truth of the formula on a world with variables bound to constant ids."""
    if isinstance(formula, Atom):
        sig = world.signature
        args = tuple(assignment[v] for v in formula.vars)
        return bool(world.bits[sig.atom_index(formula.pred, args)])
    if isinstance(formula, Not):
        return not eval_under_assignment(formula.arg, world, assignment)
    if isinstance(formula, And):
        return eval_under_assignment(
            formula.left, world, assignment
        ) and eval_under_assignment(formula.right, world, assignment)
    if isinstance(formula, Or):
        return eval_under_assignment(
            formula.left, world, assignment
        ) or eval_under_assignment(formula.right, world, assignment)
    return (not eval_under_assignment(formula.left, world, assignment)) or (
        eval_under_assignment(formula.right, world, assignment)
    )


def satisfaction_fraction(formula: Formula, world, subset: tuple[int, ...]) -> float:
    """Fraction of injective variable assignments onto a constant subset
    under which the formula holds.  Brute-force route, independent of the
    anonymized-code evaluation."""
    k = len(subset)
    if max_variable(formula) > k:
        raise FormulaError("formula has more variables than the subset has constants")
    hits = 0
    total = 0
    for perm in itertools.permutations(subset):
        assignment = {j + 1: perm[j] for j in range(k)}
        hits += eval_under_assignment(formula, world, assignment)
        total += 1
    return hits / total
