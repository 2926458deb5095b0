"""Seeded synthetic datasets with planted relational signal, and format validation.

Two label models are available:

``overlap``
    ``y ~ Bernoulli(sigmoid(s * (n - mu)))`` where ``n`` is the node count of the
    sample's depth-1 relational subgraph and ``mu`` its mean over a pilot draw.
``relation``
    Items carry a hidden polarity ``+1``/``-1``.  A behavior is relevant when
    it shares an entity that the target reaches through a "signal" relation
    (the lower half of the relation ids).  The logit is ``s`` times the mean
    polarity of the relevant behaviors, centered by the pilot mean.  Links
    through other relations, and unrelated behaviors, are noise.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import Sample, Schema, SideSchema, parse_interaction, write_interactions
from .errors import ValidationError
from .kg import KnowledgeGraph, ProfileTable, parse_profile_line, write_kg_dir, write_profiles
from .subgraph import build


@dataclass(frozen=True)
class SynthSpec:
    n_entities: int = 50            # attribute entities; item anchors come on top
    n_relations: int = 4
    n_items: int = 40
    attrs_per_item: tuple[int, int] = (2, 4)
    n_users: int = 100
    history_size: int = 15
    behaviors_per_sample: tuple[int, int] = (3, 10)
    n_categories: int = 5
    signal: float = 4.0
    signal_kind: str = "overlap"
    n_train: int = 2000
    n_test: int = 600
    pilot: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "attrs_per_item", tuple(self.attrs_per_item))
        object.__setattr__(self, "behaviors_per_sample", tuple(self.behaviors_per_sample))
        self.validate()

    def validate(self):
        counts = (self.n_entities, self.n_relations, self.n_items, self.n_users, self.n_categories,
                  self.history_size, self.n_train, self.pilot)
        if min(counts) < 1:
            raise ValidationError("all counts must be >= 1")
        lo, hi = self.attrs_per_item
        if not 1 <= lo <= hi <= self.n_entities:
            raise ValidationError("attrs_per_item must satisfy 1 <= lo <= hi <= n_entities")
        lo, hi = self.behaviors_per_sample
        if not 0 <= lo <= hi <= 10:
            raise ValidationError("behaviors_per_sample must lie within 0..10")
        if hi > min(self.history_size, self.n_items):
            raise ValidationError("behaviors_per_sample exceeds the history size")
        if self.signal < 0:
            raise ValidationError("signal strength must be >= 0")
        if self.signal_kind not in ("overlap", "relation"):
            raise ValidationError("signal_kind must be overlap or relation")
        if self.signal_kind == "relation" and self.n_relations < 2:
            raise ValidationError("relation signal needs at least 2 relations")

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        unknown = set(obj) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"unknown spec keys: {sorted(unknown)}")
        return cls(**obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["attrs_per_item"] = list(self.attrs_per_item)
        out["behaviors_per_sample"] = list(self.behaviors_per_sample)
        return out


@dataclass
class SynthData:
    kg: KnowledgeGraph
    schema: Schema
    users: ProfileTable
    items: ProfileTable
    train: list[Sample]
    test: list[Sample]
    polarity: np.ndarray    # per item, used by the relation label model
    mu: float               # pilot mean of the label statistic

    def write(self, out_dir, spec: SynthSpec | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_kg_dir(self.kg, out / "kg")
        self.schema.save(out / "schema.json")
        write_profiles(self.users, out / "users.tsv")
        write_profiles(self.items, out / "items.tsv")
        write_interactions(self.train, out / "train.tsv")
        write_interactions(self.test, out / "test.tsv")
        if spec is not None:
            with open(out / "synth_spec.json", "w", encoding="utf-8") as fh:
                json.dump(spec.to_json(), fh, indent=1, sort_keys=True)
                fh.write("\n")


def _statistic(kg, spec, polarity, target, behaviors):
    sub = build(kg, target, behaviors, max_depth=1, fanout_cap=max(spec.attrs_per_item[1], 1) * spec.n_items)
    if spec.signal_kind == "overlap":
        return float(sub.node_count)
    anchor = kg.align(target)
    signal_rel = spec.n_relations // 2
    keys = {t for h, r, t in sub.edges if h == anchor and r < signal_rel}
    linked = {h for h, r, t in sub.edges if t in keys}
    vals = [polarity[b] for b in behaviors if b != target and kg.align(b) in linked]
    return float(np.mean(vals)) if vals else 0.0


def generate(spec: SynthSpec) -> SynthData:
    """Deterministic dataset for ``spec``; see module docstring for the label models."""
    rng = np.random.default_rng(spec.seed)

    triples = []
    for i in range(spec.n_items):
        k = rng.integers(spec.attrs_per_item[0], spec.attrs_per_item[1] + 1)
        for a in np.sort(rng.choice(spec.n_entities, size=k, replace=False)):
            triples.append((f"item:{i}", f"rel{rng.integers(spec.n_relations)}", f"attr:{a}"))
    kg = KnowledgeGraph.from_triples(
        triples, {i: f"item:{i}" for i in range(spec.n_items)},
        entities=[f"item:{i}" for i in range(spec.n_items)] + [f"attr:{a}" for a in range(spec.n_entities)])
    polarity = rng.choice([-1.0, 1.0], size=spec.n_items)

    items = ProfileTable(
        np.stack([np.arange(spec.n_items), rng.integers(spec.n_categories, size=spec.n_items)], axis=1),
        rng.lognormal(3.0, 0.5, size=(spec.n_items, 1)))
    users = ProfileTable(np.arange(spec.n_users).reshape(-1, 1),
                         rng.normal(35.0, 10.0, size=(spec.n_users, 1)))
    schema = Schema(SideSchema((spec.n_users,), 1), SideSchema((spec.n_items, spec.n_categories), 1))
    history = [rng.choice(spec.n_items, size=min(spec.history_size, spec.n_items), replace=False)
               for _ in range(spec.n_users)]

    def draw(n):
        out = []
        lo, hi = spec.behaviors_per_sample
        for _ in range(n):
            u = int(rng.integers(spec.n_users))
            k = int(rng.integers(lo, hi + 1))
            behs = tuple(int(b) for b in rng.permutation(history[u])[:k])
            out.append((u, int(rng.integers(spec.n_items)), behs))
        return out

    pilot = draw(spec.pilot)
    mu = float(np.mean([_statistic(kg, spec, polarity, t, b) for _, t, b in pilot]))

    def label(rows):
        out = []
        for u, t, b in rows:
            z = spec.signal * (_statistic(kg, spec, polarity, t, b) - mu)
            p = 1.0 / (1.0 + np.exp(-z))
            out.append(Sample(u, t, b, int(rng.random() < p)))
        return out

    train = label(draw(spec.n_train))
    test = label(draw(spec.n_test))
    return SynthData(kg, schema, users, items, train, test, polarity, mu)


# validation -------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    file: str
    line: int
    message: str

    def __str__(self):
        return f"{self.file}:{self.line}: {self.message}"


def _lines(path):
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if line:
                yield line_no, line.split("\t")


def validate(data_dir, kg_dir=None) -> list[Violation]:
    """Check every file of a dataset directory; returns one row per violation."""
    data_dir = Path(data_dir)
    kg_dir = Path(kg_dir) if kg_dir is not None else data_dir / "kg"
    out: list[Violation] = []

    def bad(path, line, msg):
        out.append(Violation(str(path), line, msg))

    required = [kg_dir / "triples.tsv", kg_dir / "alignment.tsv", data_dir / "schema.json",
                data_dir / "users.tsv", data_dir / "items.tsv"]
    missing = [p for p in required if not p.exists()]
    for p in missing:
        bad(p, 0, "missing file")
    if missing:
        return out

    declared = None
    if (kg_dir / "entities.tsv").exists():
        declared = set()
        for line_no, cols in _lines(kg_dir / "entities.tsv"):
            if len(cols) != 1:
                bad(kg_dir / "entities.tsv", line_no, f"expected 1 column, got {len(cols)}")
            elif cols[0] in declared:
                bad(kg_dir / "entities.tsv", line_no, f"duplicate entity {cols[0]!r}")
            declared.add(cols[0])
    entities = set(declared or ())
    for line_no, cols in _lines(kg_dir / "triples.tsv"):
        if len(cols) != 3 or not all(cols):
            bad(kg_dir / "triples.tsv", line_no, f"expected 3 non-empty columns, got {len(cols)}")
            continue
        if declared is not None:
            for name in (cols[0], cols[2]):
                if name not in declared:
                    bad(kg_dir / "triples.tsv", line_no, f"unknown entity {name!r}")
        else:
            entities.update((cols[0], cols[2]))

    aligned = set()
    for line_no, cols in _lines(kg_dir / "alignment.tsv"):
        path = kg_dir / "alignment.tsv"
        if len(cols) != 2:
            bad(path, line_no, f"expected 2 columns, got {len(cols)}")
            continue
        try:
            item = int(cols[0])
        except ValueError:
            bad(path, line_no, f"item id {cols[0]!r} is not an integer")
            continue
        if item in aligned:
            bad(path, line_no, f"item {item} aligned twice")
        aligned.add(item)
        if cols[1] not in entities:
            bad(path, line_no, f"unknown entity {cols[1]!r}")

    try:
        schema = Schema.load(data_dir / "schema.json")
    except (ValueError, KeyError, TypeError) as exc:
        bad(data_dir / "schema.json", 0, f"unreadable schema: {exc}")
        return out

    def profiles(path, side: SideSchema):
        ids = set()
        for line_no, cols in _lines(path):
            if len(cols) != 3:
                bad(path, line_no, f"expected 3 columns, got {len(cols)}")
                continue
            try:
                row_id, sparse, dense = parse_profile_line(cols)
            except ValueError as exc:
                bad(path, line_no, str(exc))
                continue
            if row_id in ids:
                bad(path, line_no, f"duplicate id {row_id}")
            ids.add(row_id)
            if len(sparse) != len(side.sparse):
                bad(path, line_no, f"expected {len(side.sparse)} sparse ids, got {len(sparse)}")
            else:
                for j, (v, vocab) in enumerate(zip(sparse, side.sparse)):
                    if not 0 <= v < vocab:
                        bad(path, line_no, f"sparse feature {j} id {v} outside vocabulary of {vocab}")
            if len(dense) != side.dense:
                bad(path, line_no, f"expected {side.dense} dense values, got {len(dense)}")
            elif not all(np.isfinite(dense)):
                bad(path, line_no, "non-finite dense value")
        if ids != set(range(len(ids))):
            bad(path, 0, "ids are not dense and contiguous from 0")
        return ids

    users = profiles(data_dir / "users.tsv", schema.user)
    items = profiles(data_dir / "items.tsv", schema.item)
    for item in sorted(items - aligned):
        bad(kg_dir / "alignment.tsv", 0, f"item {item} has no aligned entity")

    for split in ("train.tsv", "test.tsv"):
        path = data_dir / split
        if not path.exists():
            continue
        for line_no, cols in _lines(path):
            if len(cols) != 4:
                bad(path, line_no, f"expected 4 columns, got {len(cols)}")
                continue
            try:
                s = parse_interaction(cols)
            except ValueError as exc:
                bad(path, line_no, str(exc))
                continue
            if s.user not in users:
                bad(path, line_no, f"unknown user {s.user}")
            for item in (s.item, *s.behaviors):
                if item not in items:
                    bad(path, line_no, f"unknown item {item}")
            if len(s.behaviors) > schema.max_behaviors:
                bad(path, line_no, f"{len(s.behaviors)} behaviors exceed the limit of {schema.max_behaviors}")
    return out
