"""Seeded synthetic benchmark with typed entities.

Every entity has an ``instance of`` (P31) pair naming its type, plus noise
properties whose values carry no type information. NORMAL triples respect a
fixed relation -> (subject type, object type) table; NOVEL test triples break
it on the subject side, the object side, or both. Sentences are generated
from relation-specific templates so relation classification is keyword
separable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contrastive import Label
from .dsbuild import FactInstance, Mention, write_instances
from .evaluation import KeyPropertyAnnotation
from .io import write_jsonl
from .kb import DEFAULT_RELATIONS, EntityRecord, KnowledgeBase, save_kb, save_relations

TYPE_PID = "P31"
TYPES = ("film", "actor", "musician", "city", "politician", "athlete", "sports club")

# relation id -> (subject type, object type)
COMPATIBILITY = {
    "P161": ("film", "actor"),
    "P86": ("film", "musician"),
    "P6": ("city", "politician"),
    "P463": ("athlete", "sports club"),
}

TEMPLATES = {
    "P161": ["{e2} starred as the lead actor in {e1}.", "{e1} features {e2} in its cast."],
    "P86": ["{e2} composed the musical score for {e1}.", "The soundtrack of {e1} was composed by {e2}."],
    "P6": ["{e2} was elected mayor of {e1}.", "As mayor, {e2} governs {e1}."],
    "P463": ["{e1} joined the club {e2} as a member.", "{e1} is a club member of {e2}."],
}

NOISE_PROPERTIES = [
    ("P17", "country"),
    ("P571", "inception"),
    ("P856", "official website"),
    ("P138", "named after"),
    ("P373", "Commons category"),
    ("P1448", "official name"),
    ("P2002", "social media username"),
    ("P910", "topic's main category"),
]
COUNTRIES = ["Norland", "Vastria", "Ostrel", "Marquen", "Telluria", "Brevonia", "Caldera", "Ismark"]
SYLLABLES = ["ka", "lo", "mi", "ra", "ten", "vor", "sil", "dun", "bel", "qua", "zer", "pho",
             "nim", "gal", "tor", "wen", "yus", "ex", "ori", "lan"]
DESC_WORDS = ["notable", "entry", "catalogued", "item", "record", "listed", "archive", "registered",
              "documented", "reference"]


@dataclass
class SyntheticBenchmark:
    kb: KnowledgeBase
    train: list
    test: list
    annotations: list
    entity_types: dict


def _name(rng, used):
    while True:
        parts = rng.choice(SYLLABLES, size=int(rng.integers(2, 4)))
        first = "".join(parts).capitalize()
        last = "".join(rng.choice(SYLLABLES, size=2)).capitalize()
        name = f"{first} {last}"
        if name not in used:
            used.add(name)
            return name


def _noise_value(rng, pid, label):
    if pid == "P17":
        return str(rng.choice(COUNTRIES))
    if pid == "P571":
        return f"year {int(rng.integers(1850, 2020))}"
    if pid == "P856":
        return f"www.{label.split()[0].lower()}{int(rng.integers(100))}.org"
    if pid in ("P373", "P1448"):
        return label
    if pid == "P910":
        return f"Category:{label}"
    if pid == "P2002":
        return f"@{label.replace(' ', '_').lower()}"
    return "".join(rng.choice(SYLLABLES, size=3)).capitalize()


def _entities(rng, per_type):
    used: set[str] = set()
    records, types = [], {}
    n = 0
    for etype in TYPES:
        for _ in range(per_type):
            n += 1
            eid = f"Q{1000 + n}"
            label = _name(rng, used)
            desc = " ".join(rng.choice(DESC_WORDS, size=3)) + f" {int(rng.integers(1, 10000))}"
            props = [(TYPE_PID, "instance of", [etype])]
            k = int(rng.integers(3, 7))
            for j in rng.choice(len(NOISE_PROPERTIES), size=k, replace=False):
                pid, plabel = NOISE_PROPERTIES[j]
                props.append((pid, plabel, [_noise_value(rng, pid, label)]))
            order = rng.permutation(len(props))
            records.append(EntityRecord.from_properties(eid, label, desc, [props[i] for i in order]))
            types[eid] = etype
    return records, types


def _instance(rng, e1, rel, e2, labels, label, iid):
    template = str(rng.choice(TEMPLATES[rel]))
    text, spans = "", {}
    for piece in re.split(r"(\{e[12]\})", template):
        if piece in ("{e1}", "{e2}"):
            eid = e1 if piece == "{e1}" else e2
            spans[piece] = Mention(eid, len(text), len(text) + len(labels[eid]))
            text += labels[eid]
        else:
            text += piece
    return FactInstance(text, spans["{e1}"], spans["{e2}"], rel, label, iid)


def generate_benchmark(seed=0, per_type=36, n_train=2000, n_test_normal=200, n_test_novel=200):
    rng = np.random.default_rng(seed)
    records, types = _entities(rng, per_type)
    by_type: dict[str, list[str]] = {t: [] for t in TYPES}
    for eid, t in types.items():
        by_type[t].append(eid)
    labels = {r.entity_id: r.label for r in records}
    relations = tuple(r for r in DEFAULT_RELATIONS if r.relation_id in COMPATIBILITY)
    kb = KnowledgeBase({r.entity_id: r for r in records}, relations)

    rel_ids = sorted(COMPATIBILITY)
    normal_pool = [
        (h, rel, t)
        for rel in rel_ids
        for h in by_type[COMPATIBILITY[rel][0]]
        for t in by_type[COMPATIBILITY[rel][1]]
    ]
    need = n_train + n_test_normal
    if need > len(normal_pool):
        raise ValueError(f"only {len(normal_pool)} compatible triples for {need} requested")
    chosen = [normal_pool[i] for i in rng.choice(len(normal_pool), size=need, replace=False)]
    train_triples, test_normal = chosen[:n_train], chosen[n_train:]
    seen = set(chosen)

    test_novel = []
    while len(test_novel) < n_test_novel:
        rel = rel_ids[int(rng.integers(len(rel_ids)))]
        want_h, want_t = COMPATIBILITY[rel]
        mode = int(rng.integers(3))  # 0: bad subject, 1: bad object, 2: both
        h_types = [t for t in TYPES if t != want_h] if mode in (0, 2) else [want_h]
        t_types = [t for t in TYPES if t != want_t] if mode in (1, 2) else [want_t]
        h = str(rng.choice(by_type[str(rng.choice(h_types))]))
        t = str(rng.choice(by_type[str(rng.choice(t_types))]))
        if h == t or (h, rel, t) in seen:
            continue
        seen.add((h, rel, t))
        test_novel.append((h, rel, t))

    train = [_instance(rng, h, r, t, labels, Label.NORMAL, f"train-{i}")
             for i, (h, r, t) in enumerate(train_triples)]
    test = [_instance(rng, h, r, t, labels, Label.NORMAL, f"test-{i}") for i, (h, r, t) in enumerate(test_normal)]
    test += [_instance(rng, h, r, t, labels, Label.NOVEL, f"test-{i + len(test_normal)}")
             for i, (h, r, t) in enumerate(test_novel)]
    annotations = [KeyPropertyAnnotation(inst.instance_id, frozenset({TYPE_PID}), frozenset({TYPE_PID}))
                   for inst in test]
    return SyntheticBenchmark(kb, train, test, annotations, types)


def write_benchmark(bench: SyntheticBenchmark, out_dir) -> dict:
    out = Path(out_dir)
    paths = {
        "kb": out / "kb.jsonl",
        "relations": out / "relations.jsonl",
        "train": out / "train.jsonl",
        "test": out / "test.jsonl",
        "annotations": out / "annotations.jsonl",
    }
    save_kb(bench.kb, paths["kb"])
    save_relations(bench.kb.relations, paths["relations"])
    write_instances(paths["train"], bench.train)
    write_instances(paths["test"], bench.test)
    write_jsonl(paths["annotations"], (
        {"id": a.instance_id, "key_props_e1": sorted(a.key_props_e1), "key_props_e2": sorted(a.key_props_e2)}
        for a in bench.annotations
    ))
    return paths
