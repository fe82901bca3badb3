"""Max-margin training of the triple scorer against KB-corrupted negatives."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, fields

import numpy as np
import torch

from .contrastive import Label, generate_epoch_negatives
from .encoder import TextEncoder
from .errors import CheckpointError, InvalidInputError, MissingEntityError, NumericError, PatSndError
from .checkpoint import read_arrays, write_arrays
from .io import write_jsonl
from .kb import KnowledgeBase
from .pat import BackgroundIndex, PatScorer

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PATSNDCK"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    dim_h: int = 300
    heads: int = 8
    batch_size: int = 256
    learning_rate: float = 0.001
    l2_lambda: float = 1e-4
    epochs: int = 10
    margin: float = 1.0
    seed: int = 0
    filter_negatives: bool = True

    def __post_init__(self):
        for name in ("dim_h", "heads", "batch_size", "epochs"):
            if int(getattr(self, name)) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("learning_rate", "l2_lambda", "margin"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value < 0:
                raise InvalidInputError(f"{name} must be a finite non-negative number")


def load_config(path, **overrides) -> TrainConfig:
    """Read ``key = value`` lines (``#`` comments allowed) into a TrainConfig."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    casts = {"int": int, "float": float, "bool": lambda s: s.lower() in ("1", "true", "yes", "on")}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else ":"
            key, _, value = (part.strip() for part in line.partition(sep))
            if key not in types or not value:
                raise InvalidInputError(f"{path}:{lineno}: unknown or empty config key {key!r}")
            try:
                values[key] = casts[types[key]](value)
            except ValueError:
                raise InvalidInputError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def hinge_loss(s_normal: float, s_pseudo: float, margin: float = 1.0) -> float:
    if not (math.isfinite(s_normal) and math.isfinite(s_pseudo) and math.isfinite(margin)):
        raise NumericError("hinge loss needs finite scores and margin")
    return max(s_pseudo - s_normal + margin, 0.0)


def hinge(s_normal: torch.Tensor, s_pseudo: torch.Tensor, margin: float) -> torch.Tensor:
    return torch.clamp(s_pseudo - s_normal + margin, min=0.0)


def l2_penalty(model: PatScorer) -> torch.Tensor:
    return sum((p * p).sum() for p in model.parameters())


def objective(model: PatScorer, index: BackgroundIndex, positives, negatives, config: TrainConfig):
    """Mean pairwise hinge over the batch plus the L2 term on all trainable parameters."""
    s_pos = model.score_batch(index, [t.e1 for t in positives], [t.relation_id for t in positives],
                              [t.e2 for t in positives])
    s_neg = model.score_batch(index, [t.e1 for t in negatives], [t.relation_id for t in negatives],
                              [t.e2 for t in negatives])
    loss = hinge(s_pos, s_neg, config.margin).mean()
    if config.l2_lambda:
        loss = loss + config.l2_lambda * l2_penalty(model)
    return loss


def _check_training_set(train_triples, kb: KnowledgeBase):
    if not train_triples:
        raise InvalidInputError("training set is empty")
    for t in train_triples:
        if t.label is not Label.NORMAL:
            raise InvalidInputError(f"training triple {t.key} is not NORMAL")
        for e in (t.e1, t.e2):
            if e not in kb:
                raise MissingEntityError(f"training entity {e!r} not in knowledge base")


def train(train_triples, kb: KnowledgeBase, encoder: TextEncoder, config: TrainConfig | None = None,
          relations=None, log_path=None, model: PatScorer | None = None, index: BackgroundIndex | None = None,
          callback=None):
    """Train a scorer; returns ``(model, epoch_log)``.

    Each epoch draws one fresh negative per positive, shuffles the pairs and
    takes one Adam step per minibatch. ``callback(epoch, step, model, loss)``
    runs after every step.
    """
    config = config or TrainConfig()
    train_triples = list(train_triples)
    _check_training_set(train_triples, kb)
    if relations is None:
        relations = kb.relation_ids or tuple(sorted({t.relation_id for t in train_triples}))
    if model is None:
        model = PatScorer(relations, dim_f=encoder.dim_f, dim_h=config.dim_h, heads=config.heads,
                          seed=config.seed)
    for t in train_triples:
        model.relation_index(t.relation_id)
    if index is None:
        index = BackgroundIndex(kb, encoder)

    rng = np.random.default_rng(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    history = []
    model.train()
    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        negatives = generate_epoch_negatives(train_triples, kb, rng, filter_known=config.filter_negatives)
        order = rng.permutation(len(train_triples))
        total, count = 0.0, 0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo : lo + config.batch_size]
            pos = [train_triples[i] for i in idx]
            neg = [negatives[i] for i in idx]
            optimizer.zero_grad()
            loss = objective(model, index, pos, neg, config)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"loss became {loss.item()} at epoch {epoch}, batch starting at {lo}; "
                    f"try a smaller learning rate"
                )
            loss.backward()
            optimizer.step()
            if callback is not None:
                callback(epoch, lo // config.batch_size, model, loss.item())
            total += loss.item() * len(idx)
            count += len(idx)
        rec = {"epoch": epoch, "mean_loss": total / count, "wall_seconds": time.perf_counter() - start}
        history.append(rec)
        log.info("epoch %d mean_loss %.5f (%.1fs)", epoch, rec["mean_loss"], rec["wall_seconds"])
    model.eval()
    if log_path is not None:
        write_jsonl(log_path, history)
    return model, history


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(model: PatScorer, path, extra: dict | None = None) -> None:
    header = {"format": "patsnd-scorer", "config": model.config, "extra": extra or {}}
    write_arrays(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, header, model.state_dict())


def load_checkpoint(path) -> PatScorer:
    """Rebuild a scorer; the returned model is only constructed once the file checks out."""
    header, state = read_arrays(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    try:
        cfg = header["config"]
        model = PatScorer(cfg["relations"], dim_f=cfg["dim_f"], dim_h=cfg["dim_h"], heads=cfg["heads"],
                          dtype=state["att_weight"].dtype)
        model.load_state_dict(state)
    except (KeyError, ValueError, TypeError, RuntimeError, PatSndError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    model.eval()
    model.checkpoint_extra = header.get("extra", {})
    return model
