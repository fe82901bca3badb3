"""Entity background knowledge base and relation catalog.

Each entity carries an ordered list of property-value pairs. Two pseudo-pairs
(``label`` and, when non-empty, ``description``) are prepended so that the
attention network can weigh them like any other property.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateKeyError, EmptyKBError, KBParseError, MissingEntityError
from .io import iter_jsonl, write_jsonl

LABEL_PID = "label"
DESCRIPTION_PID = "description"
PSEUDO_PIDS = (LABEL_PID, DESCRIPTION_PID)
MAX_PROPERTIES = 64


@dataclass(frozen=True)
class PropertyValuePair:
    property_id: str
    property_label: str
    value_text: str

    def __post_init__(self):
        if not self.property_label.strip():
            raise ValueError(f"empty property label for {self.property_id!r}")
        if not self.value_text.strip():
            raise ValueError(f"empty value for property {self.property_id!r}")


@dataclass(frozen=True)
class RelationDef:
    relation_id: str
    label: str
    description: str = ""


@dataclass(frozen=True)
class EntityRecord:
    entity_id: str
    label: str
    description: str = ""
    pairs: tuple[PropertyValuePair, ...] = ()

    @classmethod
    def from_properties(cls, entity_id, label, description="", properties=()):
        """Build a record from ``(pid, plabel, [values...])`` triples.

        Multi-valued properties are expanded into one pair per value and the
        label/description pseudo-pairs are prepended.
        """
        pairs = [PropertyValuePair(LABEL_PID, LABEL_PID, label)]
        if description and description.strip():
            pairs.append(PropertyValuePair(DESCRIPTION_PID, DESCRIPTION_PID, description))
        for pid, plabel, values in properties:
            for value in values:
                pairs.append(PropertyValuePair(pid, plabel, value))
        return cls(entity_id, label, description, tuple(pairs))

    def declared_properties(self):
        """Group non-pseudo pairs back into ``(pid, plabel, [values])`` in source order."""
        grouped: dict[tuple[str, str], list[str]] = {}
        for pv in self.pairs:
            if pv.property_id in PSEUDO_PIDS:
                continue
            grouped.setdefault((pv.property_id, pv.property_label), []).append(pv.value_text)
        return [(pid, plabel, values) for (pid, plabel), values in grouped.items()]


@dataclass(frozen=True)
class KnowledgeBase:
    entities: Mapping[str, EntityRecord] = field(default_factory=dict)
    relations: tuple[RelationDef, ...] = ()

    def __post_init__(self):
        for key, rec in self.entities.items():
            if key != rec.entity_id:
                raise ValueError(f"entity key {key!r} does not match record id {rec.entity_id!r}")
        seen = set()
        for rel in self.relations:
            if rel.relation_id in seen:
                raise DuplicateKeyError(f"duplicate relation id {rel.relation_id!r}")
            seen.add(rel.relation_id)
        # sorted view for uniform sampling independent of dict construction order
        object.__setattr__(self, "_ids", tuple(sorted(self.entities)))

    def __len__(self):
        return len(self.entities)

    def __contains__(self, entity_id):
        return entity_id in self.entities

    def __getitem__(self, entity_id) -> EntityRecord:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise MissingEntityError(f"entity {entity_id!r} not in knowledge base") from None

    @property
    def entity_ids(self) -> tuple[str, ...]:
        return self._ids

    @property
    def relation_ids(self) -> tuple[str, ...]:
        return tuple(r.relation_id for r in self.relations)

    @property
    def property_ids(self) -> set[str]:
        return {pv.property_id for rec in self.entities.values() for pv in rec.pairs}

    def with_relations(self, relations: Sequence[RelationDef]) -> "KnowledgeBase":
        return KnowledgeBase(self.entities, tuple(relations))

    def merged(self, records: Iterable[EntityRecord]) -> "KnowledgeBase":
        """Return a new KB with extra entity records; ids must not collide."""
        entities = dict(self.entities)
        for rec in records:
            if rec.entity_id in entities:
                raise DuplicateKeyError(f"duplicate entity id {rec.entity_id!r}")
            entities[rec.entity_id] = rec
        return KnowledgeBase(entities, self.relations)


def _parse_entity(obj, path, lineno) -> EntityRecord:
    if not isinstance(obj, dict):
        raise KBParseError(path, lineno, "expected a JSON object")
    try:
        entity_id = obj["id"]
        label = obj["label"]
    except KeyError as exc:
        raise KBParseError(path, lineno, f"missing field {exc.args[0]!r}") from None
    description = obj.get("description") or ""
    if not isinstance(entity_id, str) or not entity_id:
        raise KBParseError(path, lineno, "'id' must be a non-empty string")
    if not isinstance(label, str) or not label.strip():
        raise KBParseError(path, lineno, "'label' must be a non-empty string")
    props = []
    for prop in obj.get("properties") or []:
        try:
            pid, plabel, values = prop["pid"], prop["plabel"], prop["values"]
        except (KeyError, TypeError):
            raise KBParseError(path, lineno, "property needs 'pid', 'plabel' and 'values'") from None
        if isinstance(values, str):
            values = [values]
        if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
            raise KBParseError(path, lineno, f"values of {pid!r} must be a list of strings")
        props.append((pid, plabel, values))
    try:
        return EntityRecord.from_properties(entity_id, label, description, props)
    except ValueError as exc:
        raise KBParseError(path, lineno, str(exc)) from None


def load_kb(path, relations: Sequence[RelationDef] = ()) -> KnowledgeBase:
    """Load a KB from JSON Lines, one entity object per line."""
    entities: dict[str, EntityRecord] = {}
    for lineno, obj in iter_jsonl(path, KBParseError):
        rec = _parse_entity(obj, path, lineno)
        if rec.entity_id in entities:
            raise DuplicateKeyError(f"{path}:{lineno}: duplicate entity id {rec.entity_id!r}")
        entities[rec.entity_id] = rec
    return KnowledgeBase(entities, tuple(relations))


def entity_to_json(rec: EntityRecord) -> dict:
    return {
        "id": rec.entity_id,
        "label": rec.label,
        "description": rec.description,
        "properties": [
            {"pid": pid, "plabel": plabel, "values": values}
            for pid, plabel, values in rec.declared_properties()
        ],
    }


def save_kb(kb: KnowledgeBase, path) -> None:
    write_jsonl(path, (entity_to_json(kb.entities[eid]) for eid in kb.entities))


def load_relations(path) -> tuple[RelationDef, ...]:
    rels = []
    seen = set()
    for lineno, obj in iter_jsonl(path, KBParseError):
        try:
            rid, label = obj["rid"], obj["label"]
        except (KeyError, TypeError):
            raise KBParseError(path, lineno, "relation needs 'rid' and 'label'") from None
        if rid in seen:
            raise DuplicateKeyError(f"{path}:{lineno}: duplicate relation id {rid!r}")
        seen.add(rid)
        rels.append(RelationDef(rid, label, obj.get("description", "")))
    return tuple(rels)


def save_relations(relations: Iterable[RelationDef], path) -> None:
    write_jsonl(
        path,
        ({"rid": r.relation_id, "label": r.label, "description": r.description} for r in relations),
    )


def background(kb: KnowledgeBase, entity_id, max_properties=MAX_PROPERTIES) -> list[PropertyValuePair]:
    """Return the entity's property-value pairs, pseudo-pairs first, truncated."""
    return list(kb[entity_id].pairs[:max_properties])


def sample_entity(kb: KnowledgeBase, rng) -> str:
    """Draw an entity id uniformly at random with a ``numpy.random.Generator``."""
    if not kb.entity_ids:
        raise EmptyKBError("cannot sample from an empty knowledge base")
    return kb.entity_ids[int(rng.integers(len(kb.entity_ids)))]


def build_kb_from_triples(
    triples: Iterable[tuple[str, str, str]],
    labels: Mapping[str, str],
    descriptions: Mapping[str, str] | None = None,
    property_labels: Mapping[str, str] | None = None,
    relations: Sequence[RelationDef] = (),
) -> KnowledgeBase:
    """Derive each entity's background from repository triples it takes part in.

    For a triple ``(s, p, o)`` the subject gets the pair ``(p, label(o))`` and the
    object gets ``(p, label(s))``. Entities without a label are skipped as values.
    """
    descriptions = descriptions or {}
    property_labels = property_labels or {}
    props: dict[str, dict[tuple[str, str], list[str]]] = defaultdict(dict)
    for s, p, o in triples:
        plabel = property_labels.get(p, p)
        if o in labels:
            props[s].setdefault((p, plabel), []).append(labels[o])
        if s in labels:
            props[o].setdefault((p, plabel), []).append(labels[s])
    entities = {}
    for eid, label in labels.items():
        grouped = props.get(eid, {})
        entities[eid] = EntityRecord.from_properties(
            eid,
            label,
            descriptions.get(eid, ""),
            [(pid, plabel, values) for (pid, plabel), values in grouped.items()],
        )
    return KnowledgeBase(entities, tuple(relations))


# Default catalog of 20 person-related relations.
DEFAULT_RELATIONS: tuple[RelationDef, ...] = tuple(
    RelationDef(rid, label, desc)
    for rid, label, desc in [
        ("P6", "head of government", "head of the executive power of this town, city, municipality, state, country, or other governmental body"),
        ("P39", "position held", "subject currently or formerly holds the object position or public office"),
        ("P57", "director", "director(s) of film, TV-series, stageplay, video game or similar"),
        ("P58", "screenwriter", "person(s) who wrote the script for subject item"),
        ("P61", "discoverer or inventor", "subject who discovered, first described, invented, or developed this discovery or invention"),
        ("P84", "architect", "person or architectural firm responsible for designing this building"),
        ("P86", "composer", "person(s) who wrote the music [for lyricist, use \"lyrics by\" (P676)]"),
        ("P161", "cast member", "actor in the subject production [use \"character role\" (P453) and/or \"name of the character role\" (P4633) as qualifiers] [use \"voice actor\" (P725) for voice-only role]"),
        ("P170", "creator", "maker of this creative work or other object (where no more specific property exists). Paintings with unknown painters, use \"anonymous\" (Q4233718) as value."),
        ("P175", "performer", "actor, musician, band or other performer associated with this role or musical work"),
        ("P241", "military branch", "branch to which this military unit, award, office, or person belongs, e.g. Royal Navy"),
        ("P412", "voice type", "person's voice type. expected values: soprano, mezzo-soprano, contralto, countertenor, tenor, baritone, bass (and derivatives)"),
        ("P413", "position played on team / speciality", "position or specialism of a player on a team"),
        ("P463", "member of", "organization, club or musical group to which the subject belongs. Do not use for membership in ethnic or social groups, nor for holding a position such as a member of parliament (use P39 for that)."),
        ("P641", "sport", "sport that the subject participates or participated in or is associated with"),
        ("P800", "notable work", "notable scientific, artistic or literary work, or other work of significance among subject's works"),
        ("P991", "successful candidate", "person(s) elected after the election"),
        ("P1303", "instrument", "musical instrument that a person plays or teaches or used in a music occupation"),
        ("P1346", "winner", "winner of an event or an award; on award items use P166/P1346 on the item for the awarded work instead; do not use for wars or battles"),
        ("P1411", "nominated for", "award nomination received by a person, organisation or creative work (inspired from \"award received\" (Property:P166))"),
    ]
)


def relation_catalog(path=None) -> tuple[RelationDef, ...]:
    """Load a catalog file, or fall back to the built-in 20 relations."""
    if path is None:
        return DEFAULT_RELATIONS
    return load_relations(Path(path))
