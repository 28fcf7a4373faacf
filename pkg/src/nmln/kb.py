"""Plain-text dataset files.

Signature file: one `name/arity` line per predicate; bare tokens list
constants explicitly.  World file: one true ground atom per line, written
as `pred(c1,...,ck)`; atoms not listed are false.  Labeled files (triple
classification) append a 0/1 label after the atom.  Lines starting with
`#` are comments.
"""

from __future__ import annotations

import re
from pathlib import Path

from .relational import Signature, SignatureError, World


class ParseError(ValueError):
    def __init__(self, path, lineno: int, message: str):
        super().__init__(f"{path}:{lineno}: {message}")
        self.path = str(path)
        self.lineno = lineno


_ATOM = re.compile(r"^\s*([A-Za-z_][\w.-]*)\s*\(\s*([^()]*?)\s*\)\s*$")
_PRED = re.compile(r"^([A-Za-z_][\w.-]*)\s*/\s*(\d+)$")
_NAME = re.compile(r"^[A-Za-z0-9_][\w.-]*$")


def _lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def parse_signature_file(path) -> tuple[list[tuple[str, int]], list[str]]:
    """Read (predicates, explicitly listed constants) from a signature file."""
    predicates: list[tuple[str, int]] = []
    constants: list[str] = []
    for lineno, line in _lines(path):
        m = _PRED.match(line)
        if m:
            predicates.append((m.group(1), int(m.group(2))))
            continue
        if _NAME.match(line):
            constants.append(line)
            continue
        raise ParseError(path, lineno, f"expected `name/arity` or a constant: {line!r}")
    if not predicates:
        raise ParseError(path, 0, "signature file declares no predicates")
    return predicates, constants


def parse_atom_line(line: str):
    """Split one `pred(a,b)` line, with an optional trailing 0/1 label."""
    label = None
    body = line
    m = re.match(r"^(.*\))\s+([01])$", line)
    if m:
        body, label = m.group(1), int(m.group(2))
    am = _ATOM.match(body)
    if am is None:
        raise ValueError(f"not a ground atom: {line!r}")
    pred = am.group(1)
    args = [a.strip() for a in am.group(2).split(",")] if am.group(2).strip() else []
    if not args or any(not _NAME.match(a) for a in args):
        raise ValueError(f"bad argument list in {line!r}")
    return pred, tuple(args), label


def read_atoms(path) -> list[tuple[str, tuple[str, ...], int | None]]:
    out = []
    for lineno, line in _lines(path):
        try:
            out.append(parse_atom_line(line))
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return out


def build_signature(
    signature_path, data_paths: list = (), auto_extend: bool = False
) -> Signature:
    """Signature from a signature file, inferring constants from data files.

    Explicitly listed constants come first (file order); constants appearing
    only in data follow in first-appearance order, unless the signature file
    listed constants explicitly and auto_extend is off, in which case unknown
    constants are an error at load time.
    """
    predicates, constants = parse_signature_file(signature_path)
    explicit = bool(constants)
    seen = set(constants)
    if not explicit or auto_extend:
        for path in data_paths:
            for pred, args, _ in read_atoms(path):
                for a in args:
                    if a not in seen:
                        seen.add(a)
                        constants.append(a)
    if not constants:
        raise SignatureError(
            f"{signature_path}: no constants listed and none found in data"
        )
    return Signature(tuple(constants), tuple(predicates))


def load_kb(path, signature: Signature) -> World:
    """World with the listed atoms true; everything else false.

    Unknown predicates or constants raise with the offending line number;
    build the signature with ``auto_extend`` to admit new constants instead.
    """
    bits = World.empty(signature).bits.copy()
    for lineno, line in _lines(path):
        try:
            pred, args, _ = parse_atom_line(line)
            arity = signature.predicate_arity(pred)
            if arity != len(args):
                raise ValueError(f"{pred}/{arity} applied to {len(args)} arguments")
            ids = tuple(signature.constant_id(a) for a in args)
            bits[signature.atom_index(pred, ids)] = 1
        except (ValueError, SignatureError) as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return World(signature, bits)


def load_labeled_atoms(path, signature: Signature) -> list[tuple[int, int | None]]:
    """(atom index, label) pairs from a test/validation file."""
    out = []
    for lineno, line in _lines(path):
        try:
            pred, args, label = parse_atom_line(line)
            ids = tuple(signature.constant_id(a) for a in args)
            out.append((signature.atom_index(pred, ids), label))
        except (ValueError, SignatureError) as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return out


def save_world(world: World, path) -> None:
    Path(path).write_text(
        "".join(f"{label}\n" for label in world.true_atoms()), encoding="utf-8"
    )


def save_signature(signature: Signature, path) -> None:
    lines = [f"{name}/{arity}" for name, arity in signature.predicates]
    lines += list(signature.constants)
    Path(path).write_text("".join(f"{l}\n" for l in lines), encoding="utf-8")
