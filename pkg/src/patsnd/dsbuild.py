"""Distant-supervision dataset construction and disjoint train/test splitting."""

from __future__ import annotations

import json
import logging
import warnings
import xml.etree.ElementTree as ET
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .contrastive import Label, Triple
from .errors import DataFormatError, InvalidInputError, LabelError, SpanError
from .io import iter_jsonl, write_jsonl
from .kb import EntityRecord

log = logging.getLogger(__name__)

INSTANCE_LABELS = (Label.NORMAL, Label.NOVEL)


@dataclass(frozen=True)
class Mention:
    entity_id: str
    start: int
    end: int

    def to_json(self):
        return {"id": self.entity_id, "start": self.start, "end": self.end}

    @classmethod
    def from_json(cls, obj):
        return cls(str(obj["id"]), int(obj["start"]), int(obj["end"]))


def check_spans(text: str, spans: Sequence[Mention]):
    for m in spans:
        if not (0 <= m.start < m.end <= len(text)):
            raise SpanError(f"span [{m.start}, {m.end}) of {m.entity_id!r} outside text of length {len(text)}")
    ordered = sorted(spans, key=lambda m: m.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise SpanError(f"spans of {a.entity_id!r} and {b.entity_id!r} overlap")


@dataclass(frozen=True)
class CorpusSentence:
    text: str
    mentions: tuple[Mention, ...]

    def __post_init__(self):
        check_spans(self.text, self.mentions)


@dataclass(frozen=True)
class FactInstance:
    text: str
    e1: Mention
    e2: Mention
    relation_id: str | None
    label: Label = Label.NORMAL
    instance_id: str | None = None

    def __post_init__(self):
        if self.e1.entity_id == self.e2.entity_id:
            raise InvalidInputError(f"instance links both mentions to {self.e1.entity_id!r}")
        object.__setattr__(self, "label", Label(self.label))
        if self.label not in INSTANCE_LABELS:
            raise LabelError(f"instance label must be NORMAL or NOVEL, got {self.label.value}")
        check_spans(self.text, (self.e1, self.e2))

    @property
    def triple(self) -> Triple:
        return Triple(self.e1.entity_id, self.relation_id, self.e2.entity_id, Label.NORMAL)

    def to_json(self):
        out = {
            "text": self.text,
            "e1": self.e1.to_json(),
            "e2": self.e2.to_json(),
            "relation": self.relation_id,
            "label": self.label.value,
        }
        if self.instance_id is not None:
            out["id"] = self.instance_id
        return out

    @classmethod
    def from_json(cls, obj):
        return cls(
            text=obj["text"],
            e1=Mention.from_json(obj["e1"]),
            e2=Mention.from_json(obj["e2"]),
            relation_id=obj.get("relation"),
            label=Label(obj.get("label", "NORMAL")),
            instance_id=None if obj.get("id") is None else str(obj["id"]),
        )


def read_instances(path) -> list[FactInstance]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            out.append(FactInstance.from_json(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(path, lineno, f"bad instance ({exc})") from None
    return out


def write_instances(path, instances: Iterable[FactInstance]):
    write_jsonl(path, (inst.to_json() for inst in instances))


def read_corpus(path) -> list[CorpusSentence]:
    out = []
    for lineno, obj in iter_jsonl(path):
        try:
            mentions = tuple(Mention.from_json(m) for m in obj.get("mentions", []))
            out.append(CorpusSentence(obj["text"], mentions))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(path, lineno, f"bad corpus sentence ({exc})") from None
    return out


def read_triples(path) -> set[tuple[str, str, str]]:
    """Read repository triples, one ``head<TAB>relation<TAB>tail`` per line."""
    out = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise DataFormatError(path, lineno, "expected 3 tab-separated fields")
            out.add(tuple(parts))
    return out


def align(corpus: Iterable[CorpusSentence], kr_triples) -> list[FactInstance]:
    """Label co-occurring entity pairs with their unique repository relation.

    A pair is emitted (in its attested direction) only when exactly one
    directed fact links the two entities; ambiguous pairs are dropped.
    """
    rels = defaultdict(list)
    for h, r, t in kr_triples:
        rels[(h, t)].append(r)
    out = []
    for sent in corpus:
        first: dict[str, Mention] = {}
        for m in sorted(sent.mentions, key=lambda m: m.start):
            first.setdefault(m.entity_id, m)
        mentions = list(first.values())
        for i, a in enumerate(mentions):
            for b in mentions[i + 1 :]:
                facts = [(a, b, r) for r in rels.get((a.entity_id, b.entity_id), ())]
                facts += [(b, a, r) for r in rels.get((b.entity_id, a.entity_id), ())]
                if len(facts) == 1:
                    head, tail, r = facts[0]
                    out.append(FactInstance(sent.text, head, tail, r, Label.NORMAL))
    return out


def _pair_key(inst: FactInstance):
    return frozenset((inst.e1.entity_id, inst.e2.entity_id))


def split(instances: Sequence[FactInstance], rng, test_pool_fraction: float):
    """Split into ``(train, test_pool)`` with no shared text or unordered entity pair.

    Instances linked by a text or a pair form a component; components are
    shuffled and greedily placed into the pool while it stays within the
    target size. Order within each part follows the input.
    """
    if not 0.0 < test_pool_fraction < 1.0:
        raise InvalidInputError("test_pool_fraction must lie strictly between 0 and 1")
    n = len(instances)
    if n == 0:
        return [], []
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner = {}
    for i, inst in enumerate(instances):
        for key in (("text", inst.text), ("pair", _pair_key(inst))):
            j = owner.setdefault(key, i)
            ri, rj = find(i), find(j)
            if ri != rj:
                parent[max(ri, rj)] = min(ri, rj)
    comps = defaultdict(list)
    for i in range(n):
        comps[find(i)].append(i)
    groups = [comps[k] for k in sorted(comps)]
    target = round(test_pool_fraction * n)
    in_pool = [False] * n
    size = 0
    for gi in rng.permutation(len(groups)):
        group = groups[gi]
        if size + len(group) <= target:
            for i in group:
                in_pool[i] = True
            size += len(group)
    if size != target:
        msg = (f"component structure allowed a test pool of {size}/{n} "
               f"({size / n:.3f}) instead of the requested {test_pool_fraction:.3f}")
        log.warning(msg)
        warnings.warn(msg, stacklevel=2)
    train = [inst for inst, p in zip(instances, in_pool) if not p]
    pool = [inst for inst, p in zip(instances, in_pool) if p]
    return train, pool


# -- annotation XML import ----------------------------------------------------------


def _parse_values(raw: str) -> list[str]:
    raw = raw.strip()
    if raw.startswith("["):
        try:
            values = json.loads(raw)
        except json.JSONDecodeError:
            values = None
        if isinstance(values, list):
            return [str(v).strip() for v in values if str(v).strip()]
    return [raw] if raw else []


def _parse_entity_block(el) -> EntityRecord:
    eid = (el.findtext("id") or "").strip()
    label = (el.findtext("label") or "").strip()
    if not eid or not label:
        raise InvalidInputError("annotated entity needs <id> and <label>")
    desc = (el.findtext("description") or "").strip()
    props = []
    for line in (el.findtext("property_value") or "").splitlines():
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split("||", 2)]
        if len(parts) != 3:
            raise InvalidInputError(f"property line needs 'pid || label || value': {line.strip()!r}")
        values = _parse_values(parts[2])
        if values:
            props.append((parts[0], parts[1], values))
    return EntityRecord.from_properties(eid, label, desc, props)


def _text_with_spans(text_el):
    """Flatten ``<text>`` mixed content; return text and ``{tag: (start, end, surface)}``."""
    chunks = [text_el.text or ""]
    spans = {}
    pos = len(chunks[0])
    for child in text_el:
        surface = "".join(child.itertext())
        spans[child.tag] = (pos, pos + len(surface), surface)
        chunks.append(surface)
        pos += len(surface)
        chunks.append(child.tail or "")
        pos += len(child.tail or "")
    raw = "".join(chunks)
    # strip leading whitespace while keeping offsets consistent
    lead = len(raw) - len(raw.lstrip())
    text = raw.strip()
    spans = {k: (s - lead, e - lead, surf) for k, (s, e, surf) in spans.items()}
    return text, spans


def import_annotation_xml(source, relation_id=None, label=Label.NOVEL):
    """Convert annotated ``<instance>`` elements into instances plus KB records.

    The ``<e1>``/``<e2>`` entity blocks define the triple's roles. Each block's
    span is the inline mention whose text equals the block label, falling back
    to the inline mention with the same tag. ``<relation>`` and
    ``<label>`` children override the defaults when present.
    """
    if hasattr(source, "read"):
        content = source.read()
    else:
        with open(source, encoding="utf-8") as fh:
            content = fh.read()
    content = content.strip()
    if content.startswith("<?xml"):
        content = content.split("?>", 1)[1]
    root = ET.fromstring(f"<root>{content}</root>")
    instances, records = [], {}
    for n, inst_el in enumerate(root.iter("instance"), start=1):
        text_el = inst_el.find("text")
        blocks = {tag: inst_el.find(tag) for tag in ("e1", "e2")}
        if text_el is None or any(b is None for b in blocks.values()):
            raise InvalidInputError(f"instance #{n} needs <text>, <e1> and <e2>")
        ents = {tag: _parse_entity_block(b) for tag, b in blocks.items()}
        text, spans = _text_with_spans(text_el)
        if set(spans) != {"e1", "e2"}:
            raise InvalidInputError(f"instance #{n}: text must mark exactly <e1> and <e2>")
        by_surface = {surf.strip(): (s, e) for s, e, surf in spans.values()}
        mentions = {}
        for tag, rec in ents.items():
            s, e = by_surface.get(rec.label, spans[tag][:2])
            mentions[tag] = Mention(rec.entity_id, s, e)
        if mentions["e1"].start == mentions["e2"].start:
            mentions = {tag: Mention(ents[tag].entity_id, *spans[tag][:2]) for tag in ents}
        for rec in ents.values():
            records.setdefault(rec.entity_id, rec)
        inst_label = (inst_el.findtext("label") or "").strip().upper() or Label(label).value
        instances.append(FactInstance(
            text=text,
            e1=mentions["e1"],
            e2=mentions["e2"],
            relation_id=(inst_el.findtext("relation") or "").strip() or relation_id,
            label=Label(inst_label),
            instance_id=(inst_el.findtext("instance_id") or "").strip() or str(n),
        ))
    return instances, list(records.values())


def relabel(instances, label: Label):
    return [replace(inst, label=label) for inst in instances]
