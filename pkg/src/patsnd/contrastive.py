"""KB-based generation of pseudo-novel triples by single-entity corruption."""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Collection, Iterable

from .errors import CorruptionExhaustedError, InvalidInputError
from .kb import KnowledgeBase, sample_entity

MAX_ATTEMPTS = 100


class Label(str, enum.Enum):
    NORMAL = "NORMAL"
    PSEUDO_NOVEL = "PSEUDO_NOVEL"
    NOVEL = "NOVEL"


@dataclass(frozen=True)
class Triple:
    e1: str
    relation_id: str
    e2: str
    label: Label = Label.NORMAL

    def __post_init__(self):
        if self.e1 == self.e2:
            raise InvalidInputError(f"triple has identical entities {self.e1!r}")
        object.__setattr__(self, "label", Label(self.label))

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.e1, self.relation_id, self.e2)


def _keys(triples: Iterable) -> set:
    return {t.key if isinstance(t, Triple) else tuple(t) for t in triples}


def corrupt(triple: Triple, kb: KnowledgeBase, train_set: Collection, rng,
            filter_known: bool = True, max_attempts: int = MAX_ATTEMPTS) -> Triple:
    """Replace one entity (side picked uniformly) with a random KB entity.

    The replacement differs from both entities of the input. With
    ``filter_known`` a candidate whose ``(e1, r, e2)`` is in ``train_set``
    (Triples or plain tuples) is rejected and resampled.
    """
    return _corrupt(triple, kb, _keys(train_set), rng, filter_known, max_attempts)


def _corrupt(triple, kb, known, rng, filter_known, max_attempts):
    if triple.label is not Label.NORMAL:
        raise InvalidInputError(f"only NORMAL triples are corrupted, got {triple.label.value}")
    if len(kb) < 3:
        raise InvalidInputError("corruption needs a knowledge base with at least 3 entities")
    for _ in range(max_attempts):
        replace_head = rng.random() < 0.5
        e_new = sample_entity(kb, rng)
        if e_new == triple.e1 or e_new == triple.e2:
            continue
        if replace_head:
            cand = (e_new, triple.relation_id, triple.e2)
        else:
            cand = (triple.e1, triple.relation_id, e_new)
        if filter_known and cand in known:
            continue
        return Triple(cand[0], cand[1], cand[2], Label.PSEUDO_NOVEL)
    raise CorruptionExhaustedError(f"no valid corruption of {triple.key} after {max_attempts} attempts")


def generate_epoch_negatives(train_triples, kb: KnowledgeBase, rng, filter_known: bool = True) -> list[Triple]:
    """One fresh pseudo-novel triple per training triple, in input order."""
    known = _keys(train_triples)
    return [_corrupt(t, kb, known, rng, filter_known, MAX_ATTEMPTS) for t in train_triples]


def with_label(triple: Triple, label: Label) -> Triple:
    return replace(triple, label=label)
