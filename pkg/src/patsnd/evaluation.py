"""AUC over novelty scores, the novelty characterization score (NCS), and report export."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .contrastive import Label, Triple
from .errors import AlignmentError, InvalidInputError, UndefinedMetricError
from .io import atomic_open, iter_jsonl, write_json
from .pat import BackgroundIndex, explain
from .relclf import predict_instances

log = logging.getLogger(__name__)


def _is_novel(label) -> bool:
    if isinstance(label, Label):
        return label is Label.NOVEL
    if isinstance(label, str):
        return Label(label) is Label.NOVEL
    return bool(label)


def auc(scores: Sequence[float], labels: Sequence) -> float:
    """Mann-Whitney AUC with NOVEL as the positive class; tied pairs count 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.array([_is_novel(lab) for lab in labels], dtype=bool)
    if scores.shape != pos.shape:
        raise InvalidInputError(f"{scores.size} scores but {pos.size} labels")
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both NORMAL and NOVEL instances")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    # average 1-based ranks over runs of equal scores
    bounds = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [scores.size]])
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + 1 + e) / 2.0
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_points(scores, labels):
    from sklearn.metrics import roc_curve

    fpr, tpr, _ = roc_curve([int(_is_novel(lab)) for lab in labels], scores)
    return list(zip(fpr.tolist(), tpr.tolist()))


@dataclass(frozen=True)
class KeyPropertyAnnotation:
    instance_id: str
    key_props_e1: frozenset
    key_props_e2: frozenset

    def __post_init__(self):
        if not self.key_props_e1 or not self.key_props_e2:
            raise InvalidInputError(f"annotation {self.instance_id!r} needs key properties for both entities")
        object.__setattr__(self, "key_props_e1", frozenset(self.key_props_e1))
        object.__setattr__(self, "key_props_e2", frozenset(self.key_props_e2))


def read_annotations(path) -> list[KeyPropertyAnnotation]:
    return [
        KeyPropertyAnnotation(str(obj["id"]), frozenset(obj["key_props_e1"]), frozenset(obj["key_props_e2"]))
        for _, obj in iter_jsonl(path)
    ]


def _annotation_map(annotations) -> dict:
    if isinstance(annotations, Mapping):
        return dict(annotations)
    return {a.instance_id: a for a in annotations}


def _aligned(reports, annotations):
    ann = _annotation_map(annotations)
    out = []
    for rep in reports:
        a = ann.get(rep.instance_id)
        if a is None:
            raise AlignmentError(f"no key-property annotation for instance {rep.instance_id!r}")
        out.append((rep, a))
    return out


def instance_ncs(report, annotation, top_n: int) -> float:
    score = 0.0
    if annotation.key_props_e1 & set(report.e1.top_properties(top_n)):
        score += 0.5
    if annotation.key_props_e2 & set(report.e2.top_properties(top_n)):
        score += 0.5
    return score


def ncs(reports, annotations, top_n: int) -> float:
    """Mean over instances of 0.5 per entity whose top-N attended pairs hit a key property."""
    pairs = _aligned(reports, annotations)
    if not pairs:
        raise UndefinedMetricError("NCS over zero instances")
    return float(np.mean([instance_ncs(rep, a, top_n) for rep, a in pairs]))


def random_ncs_baseline(reports, annotations, top_n: int, rng, trials: int = 1000) -> float:
    """NCS expected when each entity's ranked pair list is shuffled uniformly."""
    if trials < 1:
        raise InvalidInputError("trials must be at least 1")
    pairs = _aligned(reports, annotations)
    if not pairs:
        raise UndefinedMetricError("NCS over zero instances")
    per_trial = np.zeros(trials)
    for rep, ann in pairs:
        for side, keys in ((rep.e1, ann.key_props_e1), (rep.e2, ann.key_props_e2)):
            key_idx = [i for i, rp in enumerate(side.ranked) if rp.pair.property_id in keys]
            if not key_idx:
                continue
            n = len(side.ranked)
            positions = rng.random((trials, n)).argsort(axis=1).argsort(axis=1)
            per_trial += 0.5 * (positions[:, key_idx] < top_n).any(axis=1)
    return float(per_trial.mean() / len(pairs))


@dataclass
class EvalResult:
    auc: float
    ncs: dict
    scores: list
    n_normal: int
    n_novel: int
    seed: int
    ncs_random: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "auc": self.auc,
            "ncs": {str(k): v for k, v in self.ncs.items()},
            "n_normal": self.n_normal,
            "n_novel": self.n_novel,
            "seed": self.seed,
        }
        if self.ncs_random:
            out["ncs_random"] = {str(k): v for k, v in self.ncs_random.items()}
        return out


@torch.no_grad()
def score_instances(instances, kb, model, encoder, classifier, index=None):
    """Return ``(novelty_scores, triples)``; relations come from ``classifier``."""
    preds = predict_instances(classifier, instances, encoder)
    triples = [Triple(i.e1.entity_id, p.relation_id, i.e2.entity_id) for i, p in zip(instances, preds)]
    if not triples:
        return [], []
    if index is None:
        index = BackgroundIndex(kb, encoder, entity_ids=sorted({e for t in triples for e in (t.e1, t.e2)}))
    scores = []
    for lo in range(0, len(triples), 512):
        chunk = triples[lo : lo + 512]
        s = model.score_batch(index, [t.e1 for t in chunk], [t.relation_id for t in chunk],
                              [t.e2 for t in chunk])
        scores.extend((-s.double()).tolist())
    return scores, triples


def evaluate(test_instances, kb, model, encoder, classifier, annotations=None, top_ns=(1, 2, 3),
             report_dir=None, seed: int = 0, baseline_trials: int = 0, roc_csv=None) -> EvalResult:
    """Score a labeled test set and compute AUC and (if annotated) NCS.

    Attention reports are built for annotated instances, and for every
    instance when ``report_dir`` is given (one JSON file each).
    """
    instances = list(test_instances)
    scores, triples = score_instances(instances, kb, model, encoder, classifier)
    labels = [i.label for i in instances]
    result = EvalResult(
        auc=auc(scores, labels),
        ncs={},
        scores=scores,
        n_normal=sum(1 for lab in labels if lab is Label.NORMAL),
        n_novel=sum(1 for lab in labels if lab is Label.NOVEL),
        seed=seed,
    )
    ann = _annotation_map(annotations or [])
    reports = []
    for n, (inst, triple) in enumerate(zip(instances, triples)):
        iid = inst.instance_id if inst.instance_id is not None else str(n)
        if report_dir is None and iid not in ann:
            continue
        rep = explain(triple, kb, model, encoder, instance_id=iid)
        rep.extra["text"] = inst.text
        rep.extra["label"] = inst.label.value
        reports.append(rep)
        if report_dir is not None:
            write_json(Path(report_dir) / f"{iid}.json", rep.to_json())
    annotated = [r for r in reports if r.instance_id in ann]
    if annotated:
        rng = np.random.default_rng(seed)
        for k in top_ns:
            result.ncs[k] = ncs(annotated, ann, k)
            if baseline_trials:
                result.ncs_random[k] = random_ncs_baseline(annotated, ann, k, rng, baseline_trials)
    if roc_csv is not None:
        with atomic_open(roc_csv, newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["fpr", "tpr"])
            writer.writerows(roc_points(scores, labels))
    log.info("evaluated %d instances: auc=%.4f ncs=%s", len(instances), result.auc, result.ncs)
    return result
