import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from atbrg.errors import AlignmentError, IntegrityError, ParseError, UnknownIdError
from atbrg.kg import (KnowledgeGraph, ProfileTable, align, load_kg_dir, load_profiles, load_triples,
                      neighbors, write_kg_dir, write_profiles)

from conftest import TOY_ALIGNMENT, TOY_TRIPLES, random_kg


def write(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def test_empty_files(tmp_path):
    write(tmp_path / "t.tsv", [])
    write(tmp_path / "a.tsv", [])
    kg = load_triples(tmp_path / "t.tsv", tmp_path / "a.tsv")
    assert (kg.n_entities, kg.n_relations, len(kg.triples)) == (0, 0, 0)


def test_single_triple(tmp_path):
    write(tmp_path / "t.tsv", ["Blouse\tCategory\tShirt"])
    write(tmp_path / "a.tsv", [])
    kg = load_triples(tmp_path / "t.tsv", tmp_path / "a.tsv")
    assert kg.n_entities == 2
    assert kg.n_relations == 2 and kg.n_forward_relations == 1
    assert kg.relation_names == ("Category", "Category^-1")
    assert kg.inverse(0) == 1 and kg.is_inverse(1)
    assert sorted(map(tuple, kg.triples.tolist())) == [(0, 0, 1), (1, 1, 0)]


def test_toy_adjacency(toy_kg):
    shirt = toy_kg.entity_id("Shirt")
    cat_inv = toy_kg.inverse(toy_kg.relation_id("Category"))
    expected = sorted([(toy_kg.relation_id("Audience"), toy_kg.entity_id("Girl")),
                       (cat_inv, toy_kg.entity_id("Blouse")), (cat_inv, toy_kg.entity_id("Dress"))])
    assert neighbors(toy_kg, shirt) == expected
    assert len(expected) == 3


def test_neighbors_edge_cases():
    kg = KnowledgeGraph.from_triples([("a", "r", "b")], {}, entities=["iso"], inverse=False)
    assert kg.neighbors(kg.entity_id("iso")) == []
    assert kg.neighbors(kg.entity_id("a")) == [(0, kg.entity_id("b"))]
    with pytest.raises(UnknownIdError):
        kg.neighbors(99)
    with pytest.raises(KeyError):
        kg.neighbors(-1)


def test_align(toy_kg):
    assert align(toy_kg, 0) == toy_kg.entity_id("Blouse")
    with pytest.raises(AlignmentError):
        align(toy_kg, 7)


def test_first_appearance_order(toy_kg):
    assert toy_kg.entity_names[:4] == ("Blouse", "Shirt", "Dress", "Girl")
    assert toy_kg.relation_names[:3] == ("Category", "Audience", "Color")


def test_parse_error_line_number(tmp_path):
    write(tmp_path / "t.tsv", ["a\tr\tb", "", "a\tr"])
    write(tmp_path / "a.tsv", [])
    with pytest.raises(ParseError) as info:
        load_triples(tmp_path / "t.tsv", tmp_path / "a.tsv")
    assert info.value.line_no == 3


def test_alignment_to_unknown_entity(tmp_path):
    write(tmp_path / "t.tsv", ["a\tr\tb"])
    write(tmp_path / "a.tsv", ["0\tzzz"])
    with pytest.raises(IntegrityError):
        load_triples(tmp_path / "t.tsv", tmp_path / "a.tsv")


def test_declared_vocabulary_rejects_unknown_entity(tmp_path):
    write_kg_dir(KnowledgeGraph.from_triples(TOY_TRIPLES, TOY_ALIGNMENT), tmp_path)
    with open(tmp_path / "triples.tsv", "a", encoding="utf-8") as fh:
        fh.write("Blouse\tColor\tPurple\n")
    with pytest.raises(IntegrityError):
        load_kg_dir(tmp_path)


def test_duplicate_triples_dropped():
    kg = KnowledgeGraph.from_triples([("a", "r", "b"), ("a", "r", "b")], {})
    assert kg.n_forward_triples == 1 and len(kg.triples) == 2


def assert_same_kg(a, b):
    assert a.entity_names == b.entity_names
    assert a.relation_names == b.relation_names
    assert a.alignment == b.alignment
    for x, y in ((a.indptr, b.indptr), (a.adj_rel, b.adj_rel), (a.adj_tail, b.adj_tail)):
        np.testing.assert_array_equal(x, y)


@pytest.mark.parametrize("seed", range(20))
def test_round_trip(tmp_path, seed):
    kg, _, _ = random_kg(np.random.default_rng(seed))
    write_kg_dir(kg, tmp_path)
    assert_same_kg(kg, load_kg_dir(tmp_path))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjacency_invariants(seed):
    kg, triples, _ = random_kg(np.random.default_rng(seed))
    assert len(kg.triples) == 2 * kg.n_forward_triples
    as_set = set(map(tuple, kg.triples.tolist()))
    for h, r, t in as_set:
        assert (t, kg.inverse(r), h) in as_set
        assert kg.inverse(kg.inverse(r)) == r
    for e in range(kg.n_entities):
        nb = kg.neighbors(e)
        assert nb == sorted(set(nb))
        assert {(r, t) for h, r, t in as_set if h == e} == set(nb)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_queries_do_not_mutate(seed):
    rng = np.random.default_rng(seed)
    kg, _, alignment = random_kg(rng)
    before = [a.copy() for a in (kg.indptr, kg.adj_rel, kg.adj_tail)]
    for e in rng.integers(kg.n_entities, size=20):
        kg.neighbors(int(e))
    for item in alignment:
        assert 0 <= kg.align(item) < kg.n_entities
    for x, y in zip(before, (kg.indptr, kg.adj_rel, kg.adj_tail)):
        np.testing.assert_array_equal(x, y)
    with pytest.raises(ValueError):
        kg.adj_tail[0] = 0


def test_profiles_round_trip(tmp_path):
    table = ProfileTable(np.array([[0, 3], [1, 2]]), np.array([[0.5], [1.25]]))
    write_profiles(table, tmp_path / "p.tsv")
    back = load_profiles(tmp_path / "p.tsv", 2, 1)
    np.testing.assert_array_equal(back.sparse, table.sparse)
    np.testing.assert_array_equal(back.dense, table.dense)


def test_profiles_need_contiguous_ids(tmp_path):
    write(tmp_path / "p.tsv", ["0\t1\t0.5", "2\t1\t0.5"])
    with pytest.raises(IntegrityError):
        load_profiles(tmp_path / "p.tsv", 1, 1)


def test_profiles_width_checked(tmp_path):
    write(tmp_path / "p.tsv", ["0\t1,2\t0.5"])
    with pytest.raises(ParseError):
        load_profiles(tmp_path / "p.tsv", 1, 1)
