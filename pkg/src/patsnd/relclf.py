"""Relation classification for an entity pair inside a sentence.

The entity spans are wrapped in marker tokens, the marked sentence is encoded
with the (frozen) pooled text encoder and a single linear layer maps the
embedding to a softmax over the relation catalog. An oracle classifier that
passes gold relations through is provided for isolating the scoring stage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch
from torch import nn

from .checkpoint import read_arrays, write_arrays
from .encoder import TextEncoder
from .errors import CheckpointError, InvalidInputError, LabelError, SpanError
from .training import TrainConfig

E1_OPEN, E1_CLOSE, E2_OPEN, E2_CLOSE = "[E1]", "[/E1]", "[E2]", "[/E2]"
CLF_MAGIC = b"PATSNDRC"
CLF_VERSION = 1


@dataclass(frozen=True)
class RelationPrediction:
    relation_id: str
    probabilities: Mapping[str, float]


def _as_span(span):
    if hasattr(span, "start"):
        return int(span.start), int(span.end)
    start, end = span
    return int(start), int(end)


def mark_entities(text: str, span_e1, span_e2) -> str:
    """Insert entity markers around two half-open character spans."""
    (s1, t1), (s2, t2) = _as_span(span_e1), _as_span(span_e2)
    for s, t in ((s1, t1), (s2, t2)):
        if not (0 <= s < t <= len(text)):
            raise SpanError(f"span [{s}, {t}) outside text of length {len(text)}")
    if s1 < t2 and s2 < t1:
        raise SpanError("entity spans overlap")
    inserts = sorted([(s1, E1_OPEN + " "), (t1, " " + E1_CLOSE), (s2, E2_OPEN + " "), (t2, " " + E2_CLOSE)],
                     key=lambda x: x[0], reverse=True)
    for pos, tok in inserts:
        text = text[:pos] + tok + text[pos:]
    return text


class ClassifierModel(nn.Module):
    def __init__(self, relations: Sequence[str], dim_f: int, seed: int = 0):
        super().__init__()
        if not relations or len(set(relations)) != len(relations):
            raise ValueError("relations must be a non-empty list of unique ids")
        self.relations = tuple(relations)
        self.dim_f = int(dim_f)
        self.linear = nn.Linear(self.dim_f, len(self.relations))
        gen = torch.Generator().manual_seed(int(seed))
        bound = 1.0 / np.sqrt(self.dim_f)
        with torch.no_grad():
            self.linear.weight.copy_(torch.rand(self.linear.weight.shape, generator=gen) * 2 * bound - bound)
            self.linear.bias.zero_()

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        return self.linear(feats)

    def predict_proba(self, feats) -> np.ndarray:
        with torch.no_grad():
            logits = self(torch.tensor(np.asarray(feats), dtype=self.linear.weight.dtype))
            return torch.softmax(logits.double(), dim=-1).numpy()


class OracleClassifier:
    """Returns the gold relation carried by the instance with probability 1."""

    def __init__(self, relations: Sequence[str]):
        self.relations = tuple(relations)


def _prediction(relations, probs) -> RelationPrediction:
    probs = np.asarray(probs, dtype=np.float64)
    best = int(np.argmax(probs))  # first maximum = catalog order tie-break
    return RelationPrediction(relations[best], {r: float(p) for r, p in zip(relations, probs)})


def train_relation_classifier(train, encoder: TextEncoder, config=None, relations=None) -> ClassifierModel:
    """Fit the linear layer with cross-entropy (+ L2) using Adam.

    ``train`` is a list of instances with ``text``, ``e1``, ``e2`` spans and a
    gold ``relation_id``. ``config`` supplies learning_rate, batch_size,
    epochs, l2_lambda and seed (a TrainConfig works).
    """
    config = config or TrainConfig()
    train = list(train)
    if relations is None:
        relations = sorted({inst.relation_id for inst in train})
    relations = tuple(relations)
    index = {r: i for i, r in enumerate(relations)}
    for inst in train:
        if inst.relation_id not in index:
            raise LabelError(f"relation {inst.relation_id!r} is not in the catalog")
    model = ClassifierModel(relations, encoder.dim_f, seed=config.seed)
    if not train or len(relations) == 1:
        return model
    feats = torch.as_tensor(encoder.encode_many([mark_entities(i.text, i.e1, i.e2) for i in train]),
                            dtype=torch.float32)
    labels = torch.tensor([index[i.relation_id] for i in train])
    rng = np.random.default_rng(config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    for _ in range(config.epochs):
        order = torch.as_tensor(rng.permutation(len(train)))
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            opt.zero_grad()
            loss = loss_fn(model(feats[idx]), labels[idx])
            if config.l2_lambda:
                loss = loss + config.l2_lambda * sum((p * p).sum() for p in model.parameters())
            loss.backward()
            opt.step()
    model.eval()
    return model


def predict_relation(model, text: str, span_e1, span_e2, encoder: TextEncoder | None = None,
                     gold: str | None = None) -> RelationPrediction:
    if isinstance(model, OracleClassifier):
        mark_entities(text, span_e1, span_e2)  # span validation only
        if gold is None:
            raise InvalidInputError("oracle relation mode needs a gold relation on the instance")
        if gold not in model.relations:
            raise LabelError(f"gold relation {gold!r} is not in the catalog")
        return RelationPrediction(gold, {r: float(r == gold) for r in model.relations})
    if encoder is None:
        raise InvalidInputError("a trained classifier needs the text encoder")
    feats = encoder.encode_pooled(mark_entities(text, span_e1, span_e2))
    return _prediction(model.relations, model.predict_proba(feats[None, :])[0])


def predict_instances(model, instances, encoder: TextEncoder | None = None) -> list[RelationPrediction]:
    """Batch prediction over instances (uses gold relations in oracle mode)."""
    instances = list(instances)
    if isinstance(model, OracleClassifier):
        return [predict_relation(model, i.text, i.e1, i.e2, gold=i.relation_id) for i in instances]
    if not instances:
        return []
    feats = encoder.encode_many([mark_entities(i.text, i.e1, i.e2) for i in instances])
    return [_prediction(model.relations, p) for p in model.predict_proba(feats)]


def macro_f1(gold: Sequence[str], pred: Sequence[str]) -> float:
    from sklearn.metrics import f1_score

    return float(f1_score(gold, pred, average="macro"))


def save_classifier(model: ClassifierModel, path, encoder_info: dict | None = None) -> None:
    header = {"format": "patsnd-relclf", "relations": list(model.relations), "dim_f": model.dim_f,
              "encoder": encoder_info or {}}
    write_arrays(path, CLF_MAGIC, CLF_VERSION, header, model.state_dict())


def load_classifier(path) -> ClassifierModel:
    header, state = read_arrays(path, CLF_MAGIC, CLF_VERSION)
    try:
        model = ClassifierModel(header["relations"], header["dim_f"])
        model.load_state_dict(state)
    except (KeyError, ValueError, RuntimeError) as exc:
        raise CheckpointError(f"{path}: malformed classifier checkpoint ({exc})") from None
    model.encoder_info = header.get("encoder", {})
    return model.eval()
