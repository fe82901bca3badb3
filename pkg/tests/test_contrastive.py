import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from patsnd.contrastive import Label, Triple, corrupt, generate_epoch_negatives, with_label
from patsnd.errors import CorruptionExhaustedError, InvalidInputError
from patsnd.kb import EntityRecord, KnowledgeBase


def _kb(ids):
    return KnowledgeBase({e: EntityRecord.from_properties(e, f"label {e}") for e in ids})


def test_identical_entities_rejected():
    with pytest.raises(InvalidInputError):
        Triple("a", "r", "a")


def test_sitcom_example_is_reachable():
    kb = _kb(["TBBT", "Johnny Galecki", "Warren Buffett"])
    t = Triple("TBBT", "P161", "Johnny Galecki")
    rng = np.random.default_rng(0)
    outs = {corrupt(t, kb, {t}, rng).key for _ in range(100)}
    assert ("TBBT", "P161", "Warren Buffett") in outs


def test_three_entity_enumeration():
    kb = _kb("abc")
    t = Triple("a", "r", "b")
    rng = np.random.default_rng(1)
    outs = {corrupt(t, kb, {t.key}, rng).key for _ in range(300)}
    assert outs == {("c", "r", "b"), ("a", "r", "c")}


def test_filter_toggle():
    kb = _kb("abc")
    t = Triple("a", "r", "b")
    known = {t.key, ("c", "r", "b")}
    rng = np.random.default_rng(2)
    assert {corrupt(t, kb, known, rng).key for _ in range(100)} == {("a", "r", "c")}
    assert {corrupt(t, kb, known, rng, filter_known=False).key for _ in range(200)} == {
        ("a", "r", "c"), ("c", "r", "b")}


def test_exhaustion():
    kb = _kb("abc")
    t = Triple("a", "r", "b")
    with pytest.raises(CorruptionExhaustedError):
        corrupt(t, kb, {t.key, ("a", "r", "c"), ("c", "r", "b")}, np.random.default_rng(0))


def test_precondition_errors():
    with pytest.raises(InvalidInputError):
        corrupt(Triple("a", "r", "b"), _kb("ab"), set(), np.random.default_rng(0))
    with pytest.raises(InvalidInputError):
        corrupt(Triple("a", "r", "b", Label.NOVEL), _kb("abc"), set(), np.random.default_rng(0))


def test_epoch_negatives():
    kb = _kb([f"e{i}" for i in range(30)])
    train = [Triple(f"e{i}", "r", f"e{i + 1}") for i in range(29)]
    a = generate_epoch_negatives(train, kb, np.random.default_rng(0))
    b = generate_epoch_negatives(train, kb, np.random.default_rng(1))
    assert len(a) == len(train)
    assert all(n.label is Label.PSEUDO_NOVEL for n in a)
    assert not {n.key for n in a} & {t.key for t in train}
    assert a != b
    assert generate_epoch_negatives(train, kb, np.random.default_rng(0)) == a


def test_with_label():
    assert with_label(Triple("a", "r", "b"), Label.NOVEL).label is Label.NOVEL


@given(seed=st.integers(0, 10**6), n=st.integers(3, 12), i=st.integers(0, 11), j=st.integers(0, 11))
def test_structure(seed, n, i, j):
    i, j = i % n, j % n
    if i == j:
        j = (j + 1) % n
    ids = [f"e{k}" for k in range(n)]
    t = Triple(ids[i], "r", ids[j])
    out = corrupt(t, _kb(ids), {t}, np.random.default_rng(seed))
    assert out.relation_id == "r"
    assert (out.e1 == t.e1) != (out.e2 == t.e2)
    assert out.e1 != out.e2
    assert len({out.e1, out.e2} - {t.e1, t.e2}) == 1
