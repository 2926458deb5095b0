"""Per-sample subgraph extraction linking a target item to behavior items.

Graph connect enumerates bounded-depth simple paths outward from the anchor
entity of the target item and of every behavior item, and files each path
under the entity it ends at.  Graph prune drops every bucket whose paths reach
it from a single anchor item only.  What remains is the union of the surviving
paths, kept in both directions so message passing can run item -> entity and
entity -> item.

An anchor entity counts as reached by its own item, so a path from one anchor
item that ends on another item's anchor entity always survives.

Two implementations are provided:

* :func:`enumerate_paths`, :func:`connect` and :func:`prune` operate on explicit
  :class:`Path` objects and mirror the algorithm step by step;
* :func:`build` runs a fused kernel (compiled when available) that never
  materializes paths.  Both produce identical :class:`RelationalSubgraph`
  values.
"""

from __future__ import annotations

import json
import os
import weakref
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import _extract_py
from .errors import ContractError
from .kg import KnowledgeGraph

try:
    from . import _extract_ext
except ImportError:  # pragma: no cover - depends on the build
    _extract_ext = None

MAX_NATIVE_ANCHORS = 64
MAX_NATIVE_DEPTH = 32


def native_available() -> bool:
    return _extract_ext is not None


def default_backend() -> str:
    if os.environ.get("ATBRG_PURE_PYTHON") or _extract_ext is None:
        return "python"
    return "native"


@dataclass(frozen=True)
class Path:
    """Simple path from an anchor item's entity outward.

    ``nodes[0]`` is the anchor entity of ``item``; ``relations[j]`` links
    ``nodes[j]`` to ``nodes[j + 1]``.
    """

    item: int
    nodes: tuple[int, ...]
    relations: tuple[int, ...]

    @property
    def depth(self) -> int:
        return len(self.relations)

    @property
    def end(self) -> int:
        return self.nodes[-1]

    def edges(self):
        return [(self.nodes[j], r, self.nodes[j + 1]) for j, r in enumerate(self.relations)]


@dataclass
class CandidateGraph:
    """Output of graph connect: paths bucketed by the entity they end at."""

    anchors: dict[int, int]                       # item -> anchor entity, in anchor order
    buckets: dict[int, list[Path]] = field(default_factory=dict)
    item_sets: dict[int, set[int]] = field(default_factory=dict)
    n_forward_relations: int | None = None


@dataclass(frozen=True)
class RelationalSubgraph:
    target: int
    behaviors: tuple[int, ...]
    anchors: tuple[tuple[int, int], ...]          # (item, entity), target first, no repeats
    entities: tuple[int, ...]                     # surviving non-anchor entities, sorted
    edges: tuple[tuple[int, int, int], ...]       # both directions, sorted
    item_sets: tuple[tuple[int, tuple[int, ...]], ...]

    @property
    def anchor_entities(self) -> frozenset[int]:
        return frozenset(e for _, e in self.anchors)

    @property
    def nodes(self) -> tuple[int, ...]:
        """Every graph node: anchor entities plus all edge endpoints, sorted."""
        out = set(self.anchor_entities)
        for h, _, t in self.edges:
            out.add(h)
            out.add(t)
        return tuple(sorted(out))

    @property
    def node_count(self) -> int:
        touched = {h for h, _, _ in self.edges}
        return len(self.entities) + sum(1 for _, e in self.anchors if e in touched)

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "behaviors": list(self.behaviors),
            "anchors": [list(a) for a in self.anchors],
            "entities": list(self.entities),
            "edges": [list(e) for e in self.edges],
            "item_sets": {str(e): list(items) for e, items in self.item_sets},
            "node_count": self.node_count,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RelationalSubgraph":
        return cls(
            target=int(obj["target"]),
            behaviors=tuple(obj["behaviors"]),
            anchors=tuple(tuple(a) for a in obj["anchors"]),
            entities=tuple(obj["entities"]),
            edges=tuple(tuple(e) for e in obj["edges"]),
            item_sets=tuple(sorted((int(e), tuple(v)) for e, v in obj["item_sets"].items())),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def anchor_items(target: int, behaviors: Sequence[int]) -> list[int]:
    seen = []
    for item in [target, *behaviors]:
        if item not in seen:
            seen.append(item)
    return seen


# reference implementation -------------------------------------------------

def enumerate_paths(kg: KnowledgeGraph, item: int, max_depth: int, fanout_cap: int) -> list[Path]:
    """All simple paths of 1..max_depth hops from ``align(item)``.

    Each node expands only its first ``fanout_cap`` adjacency entries in
    ``(relation id, tail id)`` order; nodes already on the path are skipped.
    Output is in depth-first pre-order.
    """
    if max_depth < 1 or fanout_cap < 1:
        raise ContractError("max_depth and fanout_cap must be >= 1")
    start = kg.align(item)
    out: list[Path] = []

    def rec(nodes, rels):
        for r, t in kg.neighbors(nodes[-1])[:fanout_cap]:
            if t in nodes:
                continue
            path = Path(item, nodes + (t,), rels + (r,))
            out.append(path)
            if path.depth < max_depth:
                rec(path.nodes, path.relations)

    rec((start,), ())
    return out


def connect(path_sets: Mapping[int, list[Path]], anchors: Mapping[int, int] | None = None,
            n_forward_relations: int | None = None) -> CandidateGraph:
    """Bucket every path under its end entity and collect bucket item-sets.

    ``anchors`` maps item -> anchor entity; when omitted it is read off the
    first node of each item's paths (items without paths are then unknown).
    """
    if anchors is None:
        anchors = {item: paths[0].nodes[0] for item, paths in path_sets.items() if paths}
    cand = CandidateGraph(anchors=dict(anchors), n_forward_relations=n_forward_relations)
    for item, entity in cand.anchors.items():
        cand.item_sets.setdefault(entity, set()).add(item)
    for item, paths in path_sets.items():
        for p in paths:
            cand.buckets.setdefault(p.end, []).append(p)
            cand.item_sets.setdefault(p.end, set()).add(item)
    return cand


def prune(cand: CandidateGraph, target: int | None = None, behaviors: Sequence[int] = ()) -> RelationalSubgraph:
    """Drop single-item buckets, keep the union of the remaining paths."""
    anchor_ents = set(cand.anchors.values())
    edges = set()
    crossing: dict[int, set[int]] = defaultdict(set)
    for entity, paths in cand.buckets.items():
        items = cand.item_sets[entity]
        if len(items) < 2:
            continue
        for p in paths:
            for h, r, t in p.edges():
                edges.add((h, r, t))
                if cand.n_forward_relations is not None:
                    n = cand.n_forward_relations
                    edges.add((t, r + n if r < n else r - n, h))
            for node in p.nodes[1:]:
                crossing[node] |= items
    entities = sorted(n for n in crossing if n not in anchor_ents)
    order = list(cand.anchors)
    if target is None:
        target = order[0] if order else -1
    return RelationalSubgraph(
        target=target,
        behaviors=tuple(behaviors),
        anchors=tuple(cand.anchors.items()),
        entities=tuple(entities),
        edges=tuple(sorted(edges)),
        item_sets=tuple((e, tuple(sorted(crossing[e]))) for e in entities),
    )


def build_reference(kg: KnowledgeGraph, target: int, behaviors: Sequence[int],
                    max_depth: int, fanout_cap: int) -> RelationalSubgraph:
    items = anchor_items(target, behaviors)
    anchors = {item: kg.align(item) for item in items}
    path_sets = {item: enumerate_paths(kg, item, max_depth, fanout_cap) for item in items}
    cand = connect(path_sets, anchors, kg.n_forward_relations if kg.augmented else None)
    return prune(cand, target, behaviors)


# fused kernel ---------------------------------------------------------------

_extractors: "weakref.WeakKeyDictionary[KnowledgeGraph, dict]" = weakref.WeakKeyDictionary()


def _extractor(kg: KnowledgeGraph, backend: str):
    cache = _extractors.setdefault(kg, {})
    if backend not in cache:
        mod = _extract_ext if backend == "native" else _extract_py
        cache[backend] = mod.Extractor(kg.indptr, kg.adj_rel, kg.adj_tail)
    return cache[backend]


def build(kg: KnowledgeGraph, target: int, behaviors: Sequence[int],
          max_depth: int = 2, fanout_cap: int = 64, backend: str | None = None) -> RelationalSubgraph:
    """Relational subgraph linking ``target`` with ``behaviors``.

    ``backend`` is ``"native"``, ``"python"`` or ``"reference"``; the default
    picks the compiled kernel when it is importable.
    """
    if max_depth < 1 or fanout_cap < 1:
        raise ContractError("max_depth and fanout_cap must be >= 1")
    backend = backend or default_backend()
    if backend == "reference":
        return build_reference(kg, target, behaviors, max_depth, fanout_cap)
    items = anchor_items(target, behaviors)
    ents = [kg.align(item) for item in items]
    if backend == "native" and (len(items) > MAX_NATIVE_ANCHORS or max_depth > MAX_NATIVE_DEPTH):
        backend = "python"
    path_edges, nodes, masks = _extractor(kg, backend).extract(
        np.asarray(ents, dtype=np.int32), int(max_depth), int(fanout_cap))

    if kg.augmented and len(path_edges):
        n = kg.n_forward_relations
        inv = path_edges[:, [2, 1, 0]].copy()
        inv[:, 1] = np.where(inv[:, 1] < n, inv[:, 1] + n, inv[:, 1] - n)
        path_edges = np.unique(np.concatenate([path_edges, inv]), axis=0)
    anchor_set = set(ents)
    item_sets = []
    for node, mask in zip(nodes, masks):
        node, mask = int(node), int(mask)
        if node in anchor_set:
            continue
        members = sorted(items[a] for a in range(len(items)) if mask >> a & 1)
        item_sets.append((node, tuple(members)))
    return RelationalSubgraph(
        target=target,
        behaviors=tuple(behaviors),
        anchors=tuple(zip(items, ents)),
        entities=tuple(e for e, _ in item_sets),
        edges=tuple(map(tuple, path_edges.tolist())),
        item_sets=tuple(item_sets),
    )


def empty_subgraph(kg: KnowledgeGraph, target: int, behaviors: Sequence[int]) -> RelationalSubgraph:
    """Subgraph with anchors only; what a zero-depth extraction yields."""
    items = anchor_items(target, behaviors)
    return RelationalSubgraph(target, tuple(behaviors), tuple((i, kg.align(i)) for i in items), (), (), ())


def node_count(sub: RelationalSubgraph) -> int:
    return sub.node_count


@dataclass(frozen=True)
class LayeredView:
    """Per-layer neighbor lists; every layer sees the same surviving edges."""

    nodes: tuple[int, ...]
    neighbors: Mapping[int, tuple[tuple[int, int], ...]]
    layers: int

    def at(self, layer: int) -> Mapping[int, tuple[tuple[int, int], ...]]:
        if not 0 <= layer < self.layers:
            raise IndexError(f"layer {layer} outside 0..{self.layers - 1}")
        return self.neighbors


def layered_view(sub: RelationalSubgraph, layers: int) -> LayeredView:
    if layers < 1:
        raise ContractError("layer count must be >= 1")
    nbrs: dict[int, list] = {n: [] for n in sub.nodes}
    for h, r, t in sub.edges:
        nbrs[h].append((r, t))
    return LayeredView(sub.nodes, {n: tuple(v) for n, v in nbrs.items()}, layers)


class SubgraphCache:
    """Memoizes :func:`build` per (target, behaviors, depth, fanout) key.

    With ``directory`` set, entries are also persisted as JSON lines so later
    runs skip extraction.
    """

    def __init__(self, kg: KnowledgeGraph, max_depth: int, fanout_cap: int, directory=None):
        self.kg = kg
        self.max_depth = max_depth
        self.fanout_cap = fanout_cap
        self._mem: dict = {}
        self._file = None
        if directory is not None:
            os.makedirs(directory, exist_ok=True)
            self._file = os.path.join(directory, f"subgraphs_d{max_depth}_f{fanout_cap}.jsonl")
            if os.path.exists(self._file):
                with open(self._file, encoding="utf-8") as fh:
                    for line in fh:
                        sub = RelationalSubgraph.from_json(json.loads(line))
                        self._mem[(sub.target, sub.behaviors)] = sub

    def get(self, target: int, behaviors: Sequence[int]) -> RelationalSubgraph:
        key = (int(target), tuple(int(b) for b in behaviors))
        sub = self._mem.get(key)
        if sub is None:
            if self.max_depth < 1:
                sub = empty_subgraph(self.kg, *key)
            else:
                sub = build(self.kg, key[0], key[1], self.max_depth, self.fanout_cap)
            self._mem[key] = sub
            if self._file is not None:
                with open(self._file, "a", encoding="utf-8") as fh:
                    fh.write(sub.dumps() + "\n")
        return sub

    def __len__(self):
        return len(self._mem)
