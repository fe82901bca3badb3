import json

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_auc
from patsnd.contrastive import Label
from patsnd.dsbuild import FactInstance, Mention
from patsnd.encoder import HashedTrigramEncoder
from patsnd.errors import AlignmentError, InvalidInputError, UndefinedMetricError
from patsnd.evaluation import (KeyPropertyAnnotation, auc, evaluate, instance_ncs, ncs, random_ncs_baseline,
                               read_annotations)
from patsnd.kb import EntityRecord, KnowledgeBase, PropertyValuePair
from patsnd.pat import AttentionReport, EntityAttention, PatScorer, rank_pairs
from patsnd.relclf import OracleClassifier

N, V = Label.NORMAL, Label.NOVEL


def test_auc_examples():
    assert auc([0.9, 0.4, 0.6, 0.1], [V, V, N, N]) == 0.75
    assert auc([5, 6, 1, 2], [V, V, N, N]) == 1.0
    assert auc([3, 3, 3, 3], [V, N, V, N]) == 0.5
    assert auc([0.2, 0.1], ["NOVEL", "NORMAL"]) == 1.0


def test_auc_errors():
    with pytest.raises(UndefinedMetricError):
        auc([1, 2], [N, N])
    with pytest.raises(InvalidInputError):
        auc([1, 2, 3], [N, V])


_labels = st.lists(st.booleans(), min_size=2, max_size=60).filter(lambda xs: any(xs) and not all(xs))


@given(flags=_labels, data=st.data())
def test_auc_matches_brute_force(flags, data):
    scores = data.draw(st.lists(st.integers(-5, 5), min_size=len(flags), max_size=len(flags)))
    labels = [V if f else N for f in flags]
    assert auc(scores, labels) == brute_auc(scores, flags)


@given(flags=_labels, data=st.data())
def test_auc_symmetry_and_monotone_invariance(flags, data):
    scores = data.draw(st.lists(st.integers(-1000, 1000), min_size=len(flags), max_size=len(flags), unique=True))
    labels = [V if f else N for f in flags]
    a = auc(scores, labels)
    assert 0.0 <= a <= 1.0
    assert abs(auc([-s for s in scores], labels) - (1 - a)) < 1e-12
    assert auc([float(s) ** 3 + 5 for s in scores], labels) == a


def _side(eid, pids):
    pairs = [PropertyValuePair(p, p, "v") for p in pids]
    weights = np.linspace(1, 0.1, len(pids))
    return EntityAttention(eid, eid, rank_pairs(pairs, weights / weights.sum()))


def _report(iid, pids1, pids2):
    return AttentionReport("r", _side("a", pids1), _side("b", pids2), 0.0, instance_id=iid)


def test_ncs_examples():
    ann = KeyPropertyAnnotation("1", {"P31"}, {"P106"})
    assert instance_ncs(_report("1", ["P31", "x"], ["P106", "y"]), ann, 1) == 1.0
    assert instance_ncs(_report("1", ["x", "P31"], ["y", "z", "P106"]), ann, 1) == 0.0
    assert instance_ncs(_report("1", ["P31", "x"], ["y", "P106"]), ann, 1) == 0.5
    reports = [_report("1", ["P31"], ["y", "P106"]), _report("2", ["x", "P31"], ["P106"])]
    anns = [ann, KeyPropertyAnnotation("2", {"P31"}, {"P106"})]
    assert ncs(reports, anns, 1) == 0.5
    assert ncs(reports, anns, 2) == 1.0


def test_ncs_missing_annotation():
    with pytest.raises(AlignmentError):
        ncs([_report("9", ["a"], ["b"])], [KeyPropertyAnnotation("1", {"a"}, {"b"})], 1)


def test_annotation_needs_key_props():
    with pytest.raises(InvalidInputError):
        KeyPropertyAnnotation("1", set(), {"a"})


@given(st.lists(st.integers(0, 9), min_size=1, max_size=8), st.integers(1, 9))
def test_ncs_monotone_in_top_n(key_positions, top_n):
    pids = [f"P{i}" for i in range(10)]
    reports = [_report(str(i), pids, pids[::-1]) for i in range(len(key_positions))]
    anns = [KeyPropertyAnnotation(str(i), {pids[k]}, {pids[k]}) for i, k in enumerate(key_positions)]
    assert ncs(reports, anns, top_n) <= ncs(reports, anns, top_n + 1)


def test_random_baseline_trivial_cases():
    rng = np.random.default_rng(0)
    rep = _report("1", ["a", "b", "c"], ["d", "e"])
    ann = [KeyPropertyAnnotation("1", {"c"}, {"e"})]
    assert random_ncs_baseline([rep], ann, 3, rng, 50) == 1.0
    single = _report("1", ["a"], ["d"])
    assert random_ncs_baseline([single], [KeyPropertyAnnotation("1", {"a"}, {"d"})], 1, rng, 50) == 1.0
    with pytest.raises(InvalidInputError):
        random_ncs_baseline([rep], ann, 1, rng, 0)


def test_random_baseline_hypergeometric():
    # one key property among 10 on each side: P(hit in top-1) = 1/10 per side, 0.5 credit each
    pids = [f"P{i}" for i in range(10)]
    rep = _report("1", pids, pids)
    ann = [KeyPropertyAnnotation("1", {"P3"}, {"P7"})]
    trials = 10_000
    got = random_ncs_baseline([rep], ann, 1, np.random.default_rng(1), trials)
    expected = 0.5 * 0.1 + 0.5 * 0.1
    sigma = np.sqrt(2 * 0.25 * 0.1 * 0.9 / trials)
    assert abs(got - expected) <= 3 * sigma


def test_read_annotations(tmp_path):
    path = tmp_path / "a.jsonl"
    path.write_text(json.dumps({"id": "7", "key_props_e1": ["P31"], "key_props_e2": ["P106", "P39"]}) + "\n")
    [a] = read_annotations(path)
    assert a == KeyPropertyAnnotation("7", frozenset({"P31"}), frozenset({"P106", "P39"}))


def _eval_setup():
    recs = [EntityRecord.from_properties(f"Q{i}", f"entity {i}", "", [("P31", "instance of", [f"t{i % 2}"])])
            for i in range(4)]
    kb = KnowledgeBase({r.entity_id: r for r in recs})
    text = "Q0 and Q1"

    def inst(a, b, label, iid):
        return FactInstance(text, Mention(f"Q{a}", 0, 2), Mention(f"Q{b}", 7, 9), "r", label, iid)

    data = [inst(0, 1, N, "a"), inst(1, 2, N, "b"), inst(2, 3, V, "c"), inst(3, 0, V, "d")]
    return kb, data


def test_untrained_zero_params_give_half_auc(tmp_path):
    kb, data = _eval_setup()
    model = PatScorer(["r"], dim_f=16, dim_h=4, heads=2)
    with torch.no_grad():
        for p in model.parameters():
            p.zero_()
    enc = HashedTrigramEncoder(dim_f=16)
    anns = [KeyPropertyAnnotation(i.instance_id, {"P31"}, {"P31"}) for i in data]
    res = evaluate(data, kb, model, enc, OracleClassifier(["r"]), annotations=anns, report_dir=tmp_path / "rep",
                   baseline_trials=20, roc_csv=tmp_path / "roc.csv")
    assert res.auc == 0.5
    assert len(res.scores) == len(data)
    assert (res.n_normal, res.n_novel) == (2, 2)
    assert all(0 <= v <= 1 for v in res.ncs.values())
    assert sorted(p.name for p in (tmp_path / "rep").iterdir()) == ["a.json", "b.json", "c.json", "d.json"]
    assert (tmp_path / "roc.csv").read_text().splitlines()[0] == "fpr,tpr"
    js = res.to_json()
    assert set(js) == {"auc", "ncs", "n_normal", "n_novel", "seed", "ncs_random"}
    assert set(js["ncs"]) == {"1", "2", "3"}


def test_trained_novel_scores_higher(bench, pipeline):
    from patsnd.evaluation import score_instances

    scores, _ = score_instances(bench.test, bench.kb, pipeline["model"], pipeline["encoder"],
                                OracleClassifier(bench.kb.relation_ids))
    novel = [s for s, i in zip(scores, bench.test) if i.label is V]
    normal = [s for s, i in zip(scores, bench.test) if i.label is N]
    assert np.mean(novel) > np.mean(normal)
