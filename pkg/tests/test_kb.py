import numpy as np
import pytest

from nmln.kb import (
    ParseError,
    build_signature,
    load_kb,
    load_labeled_atoms,
    parse_signature_file,
    save_signature,
    save_world,
)
from nmln.relational import Signature


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


class TestSignatureFile:
    def test_predicates_and_constants(self, tmp_path):
        path = write(tmp_path, "sig.txt", "sm/1\nfr/2\nAlice\nBob\n")
        preds, consts = parse_signature_file(path)
        assert preds == [("sm", 1), ("fr", 2)]
        assert consts == ["Alice", "Bob"]

    def test_comments_ignored(self, tmp_path):
        path = write(tmp_path, "sig.txt", "# people\nsm/1  # smokers\nAlice\n")
        preds, consts = parse_signature_file(path)
        assert preds == [("sm", 1)] and consts == ["Alice"]

    def test_no_predicates_is_error(self, tmp_path):
        path = write(tmp_path, "sig.txt", "Alice\n")
        with pytest.raises(ParseError):
            parse_signature_file(path)

    def test_constants_inferred_from_data(self, tmp_path):
        sig_path = write(tmp_path, "sig.txt", "sm/1\nfr/2\n")
        data = write(tmp_path, "kb.txt", "sm(Alice)\nfr(Alice,Bob)\nfr(Bob,Eve)\n")
        sig = build_signature(sig_path, [data])
        assert sig.constants == ("Alice", "Bob", "Eve")

    def test_explicit_constants_win(self, tmp_path):
        sig_path = write(tmp_path, "sig.txt", "sm/1\nEve\nAlice\n")
        data = write(tmp_path, "kb.txt", "sm(Alice)\n")
        sig = build_signature(sig_path, [data])
        assert sig.constants == ("Eve", "Alice")


class TestLoadKB:
    def test_example_world(self, tmp_path, people_sig):
        path = write(tmp_path, "kb.txt", "sm(Alice)\nfr(Alice,Bob)\n")
        world = load_kb(path, people_sig)
        assert set(world.true_atoms()) == {"sm(Alice)", "fr(Alice,Bob)"}

    def test_empty_file_all_false(self, tmp_path, people_sig):
        path = write(tmp_path, "kb.txt", "\n")
        world = load_kb(path, people_sig)
        assert world.bits.sum() == 0

    def test_many_facts_counted(self, tmp_path):
        n = 30
        sig = Signature(tuple(f"c{i}" for i in range(n)), (("r", 2),))
        lines = [f"r(c{i},c{(i + 1) % n})" for i in range(n)]
        path = write(tmp_path, "kb.txt", "\n".join(lines) + "\n")
        world = load_kb(path, sig)
        assert int(world.bits.sum()) == n

    def test_parse_error_has_line_number(self, tmp_path, people_sig):
        path = write(tmp_path, "kb.txt", "sm(Alice)\nnot an atom\n")
        with pytest.raises(ParseError) as err:
            load_kb(path, people_sig)
        assert err.value.lineno == 2

    def test_arity_mismatch(self, tmp_path, people_sig):
        path = write(tmp_path, "kb.txt", "sm(Alice,Bob)\n")
        with pytest.raises(ParseError):
            load_kb(path, people_sig)

    def test_unknown_constant_rejected(self, tmp_path, people_sig):
        path = write(tmp_path, "kb.txt", "sm(Zoe)\n")
        with pytest.raises(ParseError):
            load_kb(path, people_sig)

    def test_unknown_predicate_rejected(self, tmp_path, people_sig):
        path = write(tmp_path, "kb.txt", "drinks(Alice)\n")
        with pytest.raises(ParseError):
            load_kb(path, people_sig)


class TestRoundTrips:
    def test_world_roundtrip(self, tmp_path, people_sig, people_world):
        path = tmp_path / "out.txt"
        save_world(people_world, path)
        again = load_kb(path, people_sig)
        assert np.array_equal(again.bits, people_world.bits)

    def test_signature_roundtrip(self, tmp_path, people_sig):
        path = tmp_path / "sig.txt"
        save_signature(people_sig, path)
        sig = build_signature(path, [])
        assert sig == people_sig


class TestLabeledAtoms:
    def test_labels_parsed(self, tmp_path, people_sig):
        path = write(tmp_path, "t.txt", "sm(Alice) 1\nfr(Alice,Bob) 0\nsm(Bob)\n")
        items = load_labeled_atoms(path, people_sig)
        assert [label for _, label in items] == [1, 0, None]
        assert items[0][0] == people_sig.atom_index("sm", (0,))
