"""Property attention network and relation-specific triple scorer.

For relation ``r`` and head ``k`` each property vector ``p_i`` gets a scalar
logit ``relu(p_i . W[r, k] + b[r, k])``; a softmax over the properties gives
that head's weights, and the head-averaged weights mix the value vectors.
A triple is scored by a relation-specific linear layer over the two entities'
mixed value vectors concatenated (subject first). Higher score = more normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .encoder import TextEncoder
from .errors import EmptyPropertyListError, MissingEntityError, ShapeError, UnknownRelationError
from .kb import MAX_PROPERTIES, KnowledgeBase, PropertyValuePair, background

DEFAULT_DIM_H = 300
DEFAULT_HEADS = 8


def _ordered_sum(x: torch.Tensor) -> torch.Tensor:
    """Column sums taken over sorted entries, so row order cannot change the result."""
    return torch.sort(x, dim=0).values.sum(dim=0)


class PatScorer(nn.Module):
    """Trainable parameters: the shared projection plus one parameter set per relation.

    ``att_weight[r]`` is ``(K, H)``, ``att_bias[r]`` is ``(K,)``,
    ``score_weight[r]`` is ``(2H,)`` and ``score_bias[r]`` a scalar.
    """

    def __init__(
        self,
        relations: Sequence[str],
        dim_f: int = 768,
        dim_h: int = DEFAULT_DIM_H,
        heads: int = DEFAULT_HEADS,
        seed: int = 0,
        dtype=torch.float32,
    ):
        super().__init__()
        if len(set(relations)) != len(relations) or not relations:
            raise ValueError("relations must be a non-empty list of unique ids")
        self.relations = tuple(relations)
        self._rel_index = {r: i for i, r in enumerate(self.relations)}
        self.dim_f, self.dim_h, self.heads = int(dim_f), int(dim_h), int(heads)
        n_rel = len(self.relations)
        self.projection = nn.Linear(self.dim_f, self.dim_h, dtype=dtype)
        self.att_weight = nn.Parameter(torch.empty(n_rel, self.heads, self.dim_h, dtype=dtype))
        self.att_bias = nn.Parameter(torch.zeros(n_rel, self.heads, dtype=dtype))
        self.score_weight = nn.Parameter(torch.empty(n_rel, 2 * self.dim_h, dtype=dtype))
        self.score_bias = nn.Parameter(torch.zeros(n_rel, dtype=dtype))
        self.reset_parameters(seed)

    @property
    def config(self) -> dict:
        return {
            "relations": list(self.relations),
            "dim_f": self.dim_f,
            "dim_h": self.dim_h,
            "heads": self.heads,
        }

    @torch.no_grad()
    def reset_parameters(self, seed: int = 0):
        gen = torch.Generator().manual_seed(int(seed))

        def uniform_(t, fan_in):
            bound = 1.0 / math.sqrt(fan_in)
            t.copy_(torch.rand(t.shape, generator=gen, dtype=torch.float64) * 2 * bound - bound)

        uniform_(self.projection.weight, self.dim_f)
        self.projection.bias.zero_()
        uniform_(self.att_weight, self.dim_h)
        self.att_bias.zero_()
        uniform_(self.score_weight, 2 * self.dim_h)
        self.score_bias.zero_()

    def relation_index(self, relation_id) -> int:
        try:
            return self._rel_index[relation_id]
        except KeyError:
            raise UnknownRelationError(f"no parameters for relation {relation_id!r}") from None

    # -- single-instance path -------------------------------------------------

    def attention_weights(self, P: torch.Tensor, relation_id) -> torch.Tensor:
        r = self.relation_index(relation_id)
        P = torch.as_tensor(P, dtype=self.att_weight.dtype)
        if P.ndim != 2 or P.shape[0] == 0:
            raise EmptyPropertyListError("attention needs at least one property vector")
        if P.shape[1] != self.dim_h:
            raise ShapeError(f"property vectors have width {P.shape[1]}, expected {self.dim_h}")
        # per-row reductions (not a matmul) keep each logit independent of row position
        logits = torch.relu((P[:, None, :] * self.att_weight[r][None]).sum(dim=2) + self.att_bias[r])  # (N, K)
        e = torch.exp(logits - logits.max(dim=0).values)
        return (e / _ordered_sum(e)).mean(dim=1)

    def pat_forward(self, P, V, relation_id) -> torch.Tensor:
        V = torch.as_tensor(V, dtype=self.att_weight.dtype)
        P = torch.as_tensor(P, dtype=self.att_weight.dtype)
        if V.shape != P.shape:
            raise ShapeError(f"property matrix {tuple(P.shape)} and value matrix {tuple(V.shape)} differ")
        return _ordered_sum(self.attention_weights(P, relation_id)[:, None] * V)

    def score_projected(self, P1, V1, P2, V2, relation_id) -> torch.Tensor:
        r = self.relation_index(relation_id)
        h = torch.cat([self.pat_forward(P1, V1, relation_id), self.pat_forward(P2, V2, relation_id)])
        return h @ self.score_weight[r] + self.score_bias[r]

    def score_features(self, FP1, FV1, FP2, FV2, relation_id) -> torch.Tensor:
        """Score from un-projected encoder features (each ``(N, dim_f)``)."""
        proj = self.projection
        dt = self.att_weight.dtype
        FP1, FV1, FP2, FV2 = (torch.as_tensor(x, dtype=dt) for x in (FP1, FV1, FP2, FV2))
        return self.score_projected(proj(FP1), proj(FV1), proj(FP2), proj(FV2), relation_id)

    # -- batched path ---------------------------------------------------------

    def score_batch(self, index: "BackgroundIndex", e1s, rels, e2s) -> torch.Tensor:
        """Scores for a batch of triples given as parallel id sequences."""
        r_idx = torch.tensor([self.relation_index(r) for r in rels], dtype=torch.long)
        p1, v1, m1 = index.gather(e1s)
        p2, v2, m2 = index.gather(e2s)
        # project each distinct text row once
        rows = torch.cat([p1.flatten(), v1.flatten(), p2.flatten(), v2.flatten()])
        uniq, inv = torch.unique(rows, return_inverse=True)
        feats = index.features[uniq].to(self.att_weight.dtype)
        proj = self.projection(feats)[inv]
        sizes = [p1.numel(), v1.numel(), p2.numel(), v2.numel()]
        P1, V1, P2, V2 = (
            t.view(*shape, self.dim_h)
            for t, shape in zip(torch.split(proj, sizes), [p1.shape, v1.shape, p2.shape, v2.shape])
        )
        h1 = self._attend_batch(P1, V1, m1, r_idx)[0]
        h2 = self._attend_batch(P2, V2, m2, r_idx)[0]
        h = torch.cat([h1, h2], dim=1)
        return (h * self.score_weight[r_idx]).sum(dim=1) + self.score_bias[r_idx]

    def _attend_batch(self, P, V, mask, r_idx):
        w = self.att_weight[r_idx]  # (B, K, H)
        b = self.att_bias[r_idx]  # (B, K)
        logits = torch.relu(torch.einsum("bnh,bkh->bnk", P, w) + b[:, None, :])
        logits = logits.masked_fill(~mask[:, :, None], float("-inf"))
        alpha_bar = torch.softmax(logits, dim=1).mean(dim=2)  # (B, N)
        return torch.einsum("bn,bnh->bh", alpha_bar, V), alpha_bar


class BackgroundIndex:
    """Encoder features for the background pairs of a set of entities.

    Texts are encoded once into ``features`` (rows of width ``dim_f``); each
    entity keeps the row indices of its property and value texts.
    """

    def __init__(self, kb: KnowledgeBase, encoder: TextEncoder, entity_ids=None,
                 max_properties: int = MAX_PROPERTIES):
        self.kb = kb
        self.encoder = encoder
        self.max_properties = max_properties
        self._text_row: dict[str, int] = {}
        self._texts: list[str] = []
        self._entity_rows: dict[str, tuple[list[int], list[int]]] = {}
        self.features = torch.empty(0, encoder.dim_f, dtype=torch.float64)
        self.add(kb.entity_ids if entity_ids is None else entity_ids)

    def _row(self, text):
        row = self._text_row.get(text)
        if row is None:
            row = self._text_row[text] = len(self._texts)
            self._texts.append(text)
        return row

    def add(self, entity_ids):
        before = len(self._texts)
        for eid in entity_ids:
            if eid in self._entity_rows:
                continue
            pairs = background(self.kb, eid, self.max_properties)
            if not pairs:
                raise EmptyPropertyListError(f"entity {eid!r} has no background pairs")
            self._entity_rows[eid] = (
                [self._row(pv.property_label) for pv in pairs],
                [self._row(pv.value_text) for pv in pairs],
            )
        if len(self._texts) > before:
            new = torch.as_tensor(self.encoder.encode_many(self._texts[before:]))
            self.features = torch.cat([self.features, new])

    def gather(self, entity_ids):
        """Return padded ``(prop_rows, value_rows, mask)``, each ``(B, Nmax)``."""
        missing = [e for e in entity_ids if e not in self._entity_rows]
        if missing:
            for e in missing:
                if e not in self.kb:
                    raise MissingEntityError(f"entity {e!r} not in knowledge base")
            self.add(missing)
        rows = [self._entity_rows[e] for e in entity_ids]
        n_max = max(len(p) for p, _ in rows)
        prop = torch.zeros(len(rows), n_max, dtype=torch.long)
        val = torch.zeros(len(rows), n_max, dtype=torch.long)
        mask = torch.zeros(len(rows), n_max, dtype=torch.bool)
        for i, (p, v) in enumerate(rows):
            prop[i, : len(p)] = torch.tensor(p)
            val[i, : len(v)] = torch.tensor(v)
            mask[i, : len(p)] = True
        return prop, val, mask


# -- module-level API -----------------------------------------------------------


def attention_weights(P, params: PatScorer, relation_id) -> torch.Tensor:
    return params.attention_weights(P, relation_id)


def pat_forward(P, V, relation_id, params: PatScorer) -> torch.Tensor:
    return params.pat_forward(P, V, relation_id)


def _encode_background(pairs: Sequence[PropertyValuePair], encoder: TextEncoder):
    if not pairs:
        raise EmptyPropertyListError("background list is empty")
    fp = encoder.encode_many([pv.property_label for pv in pairs])
    fv = encoder.encode_many([pv.value_text for pv in pairs])
    return fp, fv


@torch.no_grad()
def score_triple(B1, B2, relation_id, params: PatScorer, encoder: TextEncoder) -> float:
    """Score a triple from the two entities' background pair lists."""
    params.relation_index(relation_id)
    fp1, fv1 = _encode_background(B1, encoder)
    fp2, fv2 = _encode_background(B2, encoder)
    return float(params.score_features(fp1, fv1, fp2, fv2, relation_id))


def novelty_score(triple, kb: KnowledgeBase, params: PatScorer, encoder: TextEncoder) -> float:
    """Negated triple score, so higher means more novel."""
    return -score_triple(
        background(kb, triple.e1), background(kb, triple.e2), triple.relation_id, params, encoder
    )


@dataclass(frozen=True)
class RankedPair:
    pair: PropertyValuePair
    weight: float
    rank: int


@dataclass(frozen=True)
class EntityAttention:
    entity_id: str
    label: str
    ranked: tuple[RankedPair, ...]

    def top_properties(self, n: int) -> list[str]:
        return [rp.pair.property_id for rp in self.ranked[:n]]


@dataclass
class AttentionReport:
    relation_id: str
    e1: EntityAttention
    e2: EntityAttention
    novelty_score: float
    instance_id: str | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def side(ea: EntityAttention):
            return {
                "entity": ea.entity_id,
                "label": ea.label,
                "pairs": [
                    {
                        "rank": rp.rank,
                        "weight_pct": round(100.0 * rp.weight, 4),
                        "property_id": rp.pair.property_id,
                        "property": rp.pair.property_label,
                        "value": rp.pair.value_text,
                    }
                    for rp in ea.ranked
                ],
            }

        out = {
            "instance_id": self.instance_id,
            "relation": self.relation_id,
            "novelty_score": self.novelty_score,
            "e1": side(self.e1),
            "e2": side(self.e2),
        }
        out.update(self.extra)
        return out


def rank_pairs(pairs: Sequence[PropertyValuePair], weights) -> tuple[RankedPair, ...]:
    """Sort by weight descending; equal weights keep their original order."""
    weights = np.asarray(weights, dtype=np.float64)
    order = sorted(range(len(pairs)), key=lambda i: (-weights[i], i))
    return tuple(RankedPair(pairs[i], float(weights[i]), rank) for rank, i in enumerate(order, start=1))


@torch.no_grad()
def explain(triple, kb: KnowledgeBase, params: PatScorer, encoder: TextEncoder,
            instance_id=None) -> AttentionReport:
    B1, B2 = background(kb, triple.e1), background(kb, triple.e2)
    fp1, fv1 = _encode_background(B1, encoder)
    fp2, fv2 = _encode_background(B2, encoder)
    dt = params.att_weight.dtype
    proj = params.projection
    a1 = params.attention_weights(proj(torch.as_tensor(fp1, dtype=dt)), triple.relation_id)
    a2 = params.attention_weights(proj(torch.as_tensor(fp2, dtype=dt)), triple.relation_id)
    score = float(params.score_features(fp1, fv1, fp2, fv2, triple.relation_id))
    return AttentionReport(
        relation_id=triple.relation_id,
        e1=EntityAttention(triple.e1, kb[triple.e1].label, rank_pairs(B1, a1.double().numpy())),
        e2=EntityAttention(triple.e2, kb[triple.e2].label, rank_pairs(B2, a2.double().numpy())),
        novelty_score=-score,
        instance_id=instance_id,
    )
