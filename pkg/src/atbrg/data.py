"""Interaction samples, feature schema, dataset directories and sampling."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, ParseError, SamplingError, UnknownIdError
from .kg import KnowledgeGraph, ProfileTable, load_kg_dir, load_profiles


@dataclass(frozen=True)
class Sample:
    user: int
    item: int
    behaviors: tuple[int, ...]  # most recent first
    label: int


@dataclass(frozen=True)
class SideSchema:
    sparse: tuple[int, ...]   # vocabulary size per sparse feature
    dense: int

    def width(self, d: int) -> int:
        return len(self.sparse) * d + self.dense


@dataclass(frozen=True)
class Schema:
    user: SideSchema
    item: SideSchema
    max_behaviors: int = 10

    def to_json(self) -> dict:
        return {"user": {"sparse": list(self.user.sparse), "dense": self.user.dense},
                "item": {"sparse": list(self.item.sparse), "dense": self.item.dense},
                "max_behaviors": self.max_behaviors}

    @classmethod
    def from_json(cls, obj: dict) -> "Schema":
        def side(o):
            return SideSchema(tuple(int(v) for v in o["sparse"]), int(o["dense"]))
        return cls(side(obj["user"]), side(obj["item"]), int(obj.get("max_behaviors", 10)))

    @classmethod
    def load(cls, path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")


@dataclass(frozen=True)
class DenseStats:
    """Per-column mean/std of dense profile values, fitted on training samples."""

    user_mean: np.ndarray
    user_std: np.ndarray
    item_mean: np.ndarray
    item_std: np.ndarray

    STD_FLOOR = 1e-6

    @classmethod
    def fit(cls, samples: Sequence[Sample], users: ProfileTable, items: ProfileTable) -> "DenseStats":
        u = users.dense[[s.user for s in samples]] if samples else users.dense[:0]
        i = items.dense[[s.item for s in samples]] if samples else items.dense[:0]

        def moments(x):
            if len(x) == 0:
                return np.zeros(x.shape[1]), np.ones(x.shape[1])
            return x.mean(axis=0), np.maximum(x.std(axis=0), cls.STD_FLOOR)
        return cls(*moments(u), *moments(i))

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("user_mean", "user_std", "item_mean", "item_std")}

    @classmethod
    def from_json(cls, obj) -> "DenseStats":
        return cls(*(np.array(obj[k], dtype=np.float64)
                     for k in ("user_mean", "user_std", "item_mean", "item_std")))


def standardize(values, mean, std):
    return (np.asarray(values, dtype=np.float64) - mean) / np.maximum(std, DenseStats.STD_FLOOR)


# interactions TSV -------------------------------------------------------------

def parse_interaction(cols) -> Sample:
    user, item, label, behaviors = cols
    label = int(label)
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    behs = tuple(int(b) for b in behaviors.split(",")) if behaviors else ()
    return Sample(int(user), int(item), behs, label)


def read_interactions(path) -> list[Sample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(path, line_no, f"expected 4 tab-separated columns, got {len(cols)}")
            try:
                out.append(parse_interaction(cols))
            except ValueError as exc:
                raise ParseError(path, line_no, str(exc)) from None
    return out


def write_interactions(samples: Iterable[Sample], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(f"{s.user}\t{s.item}\t{s.label}\t{','.join(map(str, s.behaviors))}\n")


def prepare_samples(samples: Iterable[Sample], max_behaviors: int, dedupe_target: bool = False) -> list[Sample]:
    """Truncate behavior lists to ``max_behaviors`` (optionally dropping the target first)."""
    out = []
    for s in samples:
        behs = s.behaviors
        if dedupe_target:
            behs = tuple(b for b in behs if b != s.item)
        out.append(Sample(s.user, s.item, behs[:max_behaviors], s.label))
    return out


@dataclass
class Dataset:
    kg: KnowledgeGraph
    schema: Schema
    users: ProfileTable
    items: ProfileTable
    train: list[Sample] = field(default_factory=list)
    test: list[Sample] = field(default_factory=list)

    def check_ids(self, samples: Iterable[Sample]) -> None:
        n_users, n_items = len(self.users), len(self.items)
        for s in samples:
            if not 0 <= s.user < n_users:
                raise UnknownIdError(f"unknown user {s.user}")
            for item in (s.item, *s.behaviors):
                if not 0 <= item < n_items:
                    raise UnknownIdError(f"unknown item {item}")


def load_dataset(data_dir, kg_dir=None) -> Dataset:
    data_dir = Path(data_dir)
    kg = load_kg_dir(kg_dir if kg_dir is not None else data_dir / "kg")
    schema = Schema.load(data_dir / "schema.json")
    users = load_profiles(data_dir / "users.tsv", len(schema.user.sparse), schema.user.dense)
    items = load_profiles(data_dir / "items.tsv", len(schema.item.sparse), schema.item.dense)
    ds = Dataset(kg, schema, users, items)
    for split in ("train", "test"):
        path = data_dir / f"{split}.tsv"
        if path.exists():
            setattr(ds, split, read_interactions(path))
    return ds


# negative sampling ----------------------------------------------------------------

def negative_sample(interactions: Sequence[Sample], item_universe: Sequence[int], k: int,
                    seed: int = 0) -> list[Sample]:
    """Each positive followed by ``k`` label-0 copies with unseen target items.

    A user's engaged set is every item they clicked or have in a behavior
    list.  Draws are uniform without replacement when enough candidates
    exist.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    rng = np.random.default_rng(seed)
    universe = np.array(sorted(set(int(i) for i in item_universe)), dtype=np.int64)
    engaged: dict[int, set[int]] = {}
    for s in interactions:
        engaged.setdefault(s.user, set()).update((s.item, *s.behaviors))
    candidates = {u: np.setdiff1d(universe, np.fromiter(seen, dtype=np.int64))
                  for u, seen in engaged.items()}
    out = []
    for s in interactions:
        pool = candidates[s.user]
        if len(pool) == 0:
            raise SamplingError(f"user {s.user} engaged with every item in the universe")
        draws = rng.choice(pool, size=k, replace=len(pool) < k)
        out.append(Sample(s.user, s.item, s.behaviors, 1))
        out.extend(Sample(s.user, int(i), s.behaviors, 0) for i in draws)
    return out
