"""Immutable knowledge-graph triple store with item-entity alignment.

Entities and relations are interned to dense integer ids in first-appearance
order.  When inverse augmentation is on (the default) every forward relation
``r`` gets a partner ``r^-1`` whose id is ``r + n_forward_relations``, and every
forward triple ``(h, r, t)`` gets the mirror ``(t, r^-1, h)``.  All traversal
then runs forward over the augmented edge set.

Adjacency is kept in CSR form (``indptr``, ``adj_rel``, ``adj_tail``) sorted by
``(relation id, tail id)`` per head; the extraction kernels read these arrays
directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import AlignmentError, IntegrityError, ParseError, UnknownIdError

INVERSE_SUFFIX = "^-1"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


class KnowledgeGraph:
    """Indexed, read-only view of a (possibly inverse-augmented) KG.

    Build instances with :meth:`from_triples` or :func:`load_triples`.
    """

    def __init__(self, entity_names, relation_names, n_forward_relations,
                 triples, alignment, augmented):
        self.entity_names: tuple[str, ...] = tuple(entity_names)
        self.relation_names: tuple[str, ...] = tuple(relation_names)
        self.n_forward_relations = int(n_forward_relations)
        self.augmented = bool(augmented)
        self._entity_index = {n: i for i, n in enumerate(self.entity_names)}
        self._relation_index = {n: i for i, n in enumerate(self.relation_names)}
        self.triples = _frozen(np.asarray(triples, dtype=np.int64).reshape(-1, 3))
        self.alignment: Mapping[int, int] = dict(alignment)

        n = len(self.entity_names)
        if len(self.triples):
            order = np.lexsort((self.triples[:, 2], self.triples[:, 1], self.triples[:, 0]))
            heads = self.triples[order, 0]
            rels = self.triples[order, 1]
            tails = self.triples[order, 2]
        else:
            heads = rels = tails = np.zeros(0, dtype=np.int64)
        counts = np.bincount(heads, minlength=n) if n else np.zeros(0, dtype=np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        self.indptr = _frozen(indptr)
        self.adj_rel = _frozen(rels.astype(np.int32))
        self.adj_tail = _frozen(tails.astype(np.int32))

    # construction -----------------------------------------------------------

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, str]],
                     alignment: Mapping[int, str] | None = None,
                     entities: Iterable[str] = (),
                     inverse: bool = True, closed: bool = False) -> "KnowledgeGraph":
        """Intern named triples.

        ``entities`` pre-declares vocabulary entries (in order) before the
        triples are scanned, which is the only way to get isolated entities.
        Duplicate forward triples are dropped, keeping the first.  With
        ``closed`` a triple naming an undeclared entity is an integrity error.
        """
        ent: dict[str, int] = {}
        rel: dict[str, int] = {}
        for name in entities:
            ent.setdefault(name, len(ent))
        forward: list[tuple[int, int, int]] = []
        seen = set()
        for h, r, t in triples:
            if closed and (h not in ent or t not in ent):
                raise IntegrityError(f"triple ({h}, {r}, {t}) references an undeclared entity")
            key = (ent.setdefault(h, len(ent)), rel.setdefault(r, len(rel)),
                   ent.setdefault(t, len(ent)))
            if key not in seen:
                seen.add(key)
                forward.append(key)
        n_fwd = len(rel)
        relation_names = list(rel)
        all_triples = list(forward)
        if inverse:
            relation_names += [name + INVERSE_SUFFIX for name in rel]
            all_triples += [(t, r + n_fwd, h) for h, r, t in forward]

        aligned = {}
        for item, name in (alignment or {}).items():
            if name not in ent:
                raise IntegrityError(f"alignment of item {item} references unknown entity {name!r}")
            aligned[int(item)] = ent[name]
        return cls(list(ent), relation_names, n_fwd, all_triples, aligned, inverse)

    # queries ----------------------------------------------------------------

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    @property
    def n_forward_triples(self) -> int:
        return len(self.triples) // 2 if self.augmented else len(self.triples)

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_index[name]
        except KeyError:
            raise UnknownIdError(f"unknown entity {name!r}") from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_index[name]
        except KeyError:
            raise UnknownIdError(f"unknown relation {name!r}") from None

    def inverse(self, relation: int) -> int:
        """Id of the inverse partner of ``relation``."""
        if not self.augmented:
            raise IntegrityError("knowledge graph was loaded without inverse augmentation")
        if not 0 <= relation < self.n_relations:
            raise UnknownIdError(f"unknown relation id {relation}")
        n = self.n_forward_relations
        return relation + n if relation < n else relation - n

    def is_inverse(self, relation: int) -> bool:
        return self.augmented and relation >= self.n_forward_relations

    def neighbors(self, entity: int) -> list[tuple[int, int]]:
        if not 0 <= entity < self.n_entities:
            raise UnknownIdError(f"unknown entity id {entity}")
        lo, hi = self.indptr[entity], self.indptr[entity + 1]
        return list(zip(self.adj_rel[lo:hi].tolist(), self.adj_tail[lo:hi].tolist()))

    def degree(self, entity: int) -> int:
        return int(self.indptr[entity + 1] - self.indptr[entity])

    def align(self, item: int) -> int:
        try:
            return self.alignment[item]
        except KeyError:
            raise AlignmentError(f"item {item} has no aligned entity") from None

    def forward_triples(self) -> list[tuple[str, str, str]]:
        n = self.n_forward_triples
        return [(self.entity_names[h], self.relation_names[r], self.entity_names[t])
                for h, r, t in self.triples[:n].tolist()]

    def __repr__(self):
        return (f"KnowledgeGraph(entities={self.n_entities}, relations={self.n_relations}, "
                f"triples={len(self.triples)}, items={len(self.alignment)})")


def neighbors(kg: KnowledgeGraph, entity: int) -> list[tuple[int, int]]:
    """Sorted ``(relation id, tail id)`` adjacency of ``entity``."""
    return kg.neighbors(entity)


def align(kg: KnowledgeGraph, item: int) -> int:
    """Anchor entity id of ``item``."""
    return kg.align(item)


# TSV io ---------------------------------------------------------------------

def _read_rows(path, n_cols):
    with open(path, encoding="utf-8", newline="\n") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != n_cols:
                raise ParseError(path, line_no, f"expected {n_cols} tab-separated columns, got {len(cols)}")
            yield line_no, cols


def read_triples(path) -> list[tuple[str, str, str]]:
    return [tuple(cols) for _, cols in _read_rows(path, 3)]


def read_alignment(path) -> dict[int, str]:
    out = {}
    for line_no, (item, entity) in _read_rows(path, 2):
        try:
            out[int(item)] = entity
        except ValueError:
            raise ParseError(path, line_no, f"item id {item!r} is not an integer") from None
    return out


def load_triples(triples_path, alignment_path, inverse: bool = True) -> KnowledgeGraph:
    """Load ``head\\trelation\\ttail`` triples and ``item_id\\tentity`` alignment."""
    return KnowledgeGraph.from_triples(read_triples(triples_path),
                                       read_alignment(alignment_path), inverse=inverse)


def read_entities(path) -> list[str]:
    return [cols[0] for _, cols in _read_rows(path, 1)]


def load_kg_dir(kg_dir, inverse: bool = True) -> KnowledgeGraph:
    """Load ``triples.tsv`` and ``alignment.tsv``; ``entities.tsv``, when present, fixes the vocabulary."""
    kg_dir = Path(kg_dir)
    ent_path = kg_dir / "entities.tsv"
    entities = read_entities(ent_path) if ent_path.exists() else ()
    return KnowledgeGraph.from_triples(read_triples(kg_dir / "triples.tsv"),
                                       read_alignment(kg_dir / "alignment.tsv"),
                                       entities=entities, inverse=inverse, closed=ent_path.exists())


def write_kg_dir(kg: KnowledgeGraph, kg_dir) -> None:
    """Write the canonical form: vocabulary, forward triples in id order, alignment by item."""
    kg_dir = Path(kg_dir)
    kg_dir.mkdir(parents=True, exist_ok=True)
    with open(kg_dir / "entities.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for name in kg.entity_names:
            fh.write(f"{name}\n")
    with open(kg_dir / "triples.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in kg.forward_triples():
            fh.write(f"{h}\t{r}\t{t}\n")
    with open(kg_dir / "alignment.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for item in sorted(kg.alignment):
            fh.write(f"{item}\t{kg.entity_names[kg.alignment[item]]}\n")


# profiles ---------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileTable:
    """Per-row sparse feature ids and dense values for users or items.

    Row ``k`` describes id ``k``; ids are dense from 0.
    """

    sparse: np.ndarray  # (n, n_sparse) int64
    dense: np.ndarray   # (n, n_dense) float64

    def __len__(self):
        return self.sparse.shape[0]

    @property
    def n_sparse(self) -> int:
        return self.sparse.shape[1]

    @property
    def n_dense(self) -> int:
        return self.dense.shape[1]


def parse_profile_line(cols):
    row_id = int(cols[0])
    sparse = [int(v) for v in cols[1].split(",")] if cols[1] else []
    dense = [float(v) for v in cols[2].split(",")] if cols[2] else []
    return row_id, sparse, dense


def load_profiles(path, n_sparse: int, n_dense: int) -> ProfileTable:
    rows = {}
    for line_no, cols in _read_rows(path, 3):
        try:
            row_id, sparse, dense = parse_profile_line(cols)
        except ValueError as exc:
            raise ParseError(path, line_no, str(exc)) from None
        if len(sparse) != n_sparse or len(dense) != n_dense:
            raise ParseError(path, line_no, f"expected {n_sparse} sparse and {n_dense} dense values")
        if row_id in rows:
            raise ParseError(path, line_no, f"duplicate id {row_id}")
        rows[row_id] = (sparse, dense)
    if sorted(rows) != list(range(len(rows))):
        raise IntegrityError(f"{path}: ids must be dense and contiguous from 0")
    sp = np.array([rows[k][0] for k in range(len(rows))], dtype=np.int64).reshape(len(rows), n_sparse)
    de = np.array([rows[k][1] for k in range(len(rows))], dtype=np.float64).reshape(len(rows), n_dense)
    return ProfileTable(sp, de)


def write_profiles(table: ProfileTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for k in range(len(table)):
            sp = ",".join(str(v) for v in table.sparse[k].tolist())
            de = ",".join(repr(v) for v in table.dense[k].tolist())
            fh.write(f"{k}\t{sp}\t{de}\n")
