import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqot.kg import from_named_triples
from lqot.query import (SHAPES, Anchor, Complement, Intersect, NegProject, Project,
                        QueryArityError, QueryNameError, QuerySyntaxError, Union, WorkloadItem,
                        count_variables, guess_shape, parse, random_tree, read_workload, render,
                        sample_query, traverse_answers, write_workload)


@pytest.fixture
def kg():
    return from_named_triples([("a", "r1", "b"), ("b", "r2", "c"), ("b", "r3", "a"),
                               ("we\"ird", "r1", "back\\slash")])


def ids(kg, names):
    return frozenset(kg.vocab.entity(n) for n in names)


def test_parse_chain(kg):
    v = kg.vocab
    tree = parse('(p r2 (p r1 "a"))', v)
    assert tree == Project(v.relation("r2"), Project(v.relation("r1"), Anchor(v.entity("a"))))


def test_parse_pin_style(kg):
    v = kg.vocab
    tree = parse('(i (p r1 "a") (np r3 "b"))', v)
    assert tree == Intersect((Project(v.relation("r1"), Anchor(v.entity("a"))),
                              NegProject(v.relation("r3"), Anchor(v.entity("b")))))


def test_union_needs_two_children(kg):
    with pytest.raises(QueryArityError):
        parse('(u (p r1 "a"))', kg.vocab)


@pytest.mark.parametrize("text", ['(p r1 "a"', '(x r1 "a")', '(p r1 "a") extra', '"a', '()'])
def test_syntax_errors(kg, text):
    with pytest.raises(QuerySyntaxError):
        parse(text, kg.vocab)


def test_syntax_error_has_position(kg):
    with pytest.raises(QuerySyntaxError) as err:
        parse('(p r1 "a") )', kg.vocab)
    assert err.value.position == 11


@pytest.mark.parametrize("text", ['(p nope "a")', '(p r1 "zed")'])
def test_unknown_names(kg, text):
    with pytest.raises(QueryNameError):
        parse(text, kg.vocab)


def test_escaped_names_round_trip(kg):
    tree = parse('(u (p r1 "we\\"ird") (n "back\\\\slash"))', kg.vocab)
    assert parse(render(tree, kg.vocab), kg.vocab) == tree


def test_traverse_chain():
    kg = from_named_triples([("a", "r1", "b"), ("b", "r2", "c")])
    assert traverse_answers(kg, parse('(p r2 (p r1 "a"))', kg.vocab)) == ids(kg, "c")
    one = parse('(p r1 "a")', kg.vocab)
    assert traverse_answers(kg, Intersect((one, one))) == traverse_answers(kg, one)


def test_traverse_negation():
    kg = from_named_triples([("a", "r1", "b"), ("c", "r2", "c")])
    assert traverse_answers(kg, parse('(np r1 "a")', kg.vocab)) == ids(kg, "ac")
    assert traverse_answers(kg, parse('(n (p r1 "a"))', kg.vocab)) == ids(kg, "ac")


def test_variable_count(kg):
    assert count_variables(parse('(p r1 "a")', kg.vocab)) == 0
    assert count_variables(parse('(p r3 (p r2 (p r1 "a")))', kg.vocab)) == 2
    assert count_variables(parse('(i (p r2 (p r1 "a")) (np r3 "b"))', kg.vocab)) == 1


def test_sample_single_edge():
    kg = from_named_triples([("a", "r1", "b")])
    tree, gold = sample_query(kg, "1p", seed=0)
    assert tree == Project(0, Anchor(0)) and gold == {1}


@pytest.mark.parametrize("shape", SHAPES)
def test_sampling_is_deterministic_and_consistent(small_kg, shape):
    tree, gold = sample_query(small_kg, shape, seed=12)
    assert (tree, gold) == sample_query(small_kg, shape, seed=12)
    assert gold and gold == traverse_answers(small_kg, tree)
    assert guess_shape(tree) == shape


def test_sampling_rejects_unknown_shape(small_kg):
    with pytest.raises(ValueError):
        sample_query(small_kg, "4p", seed=0)


def test_workload_round_trip(tmp_path, small_kg):
    items = []
    for i, shape in enumerate(SHAPES):
        tree, gold = sample_query(small_kg, shape, seed=i)
        items.append(WorkloadItem(tree, f"question {i}?", gold, shape))
    path = tmp_path / "w.tsv"
    write_workload(path, items, small_kg.vocab)
    assert read_workload(path, small_kg.vocab) == items


names = st.text(st.characters(blacklist_categories=("Cs",), blacklist_characters="\t\n\r"),
                min_size=1, max_size=6)


@settings(max_examples=150, deadline=None)
@given(st.lists(names, min_size=2, max_size=6, unique=True), st.integers(0, 2**32 - 1))
def test_render_parse_round_trip(entity_names, seed):
    rows = [(h, "rel", t) for h, t in zip(entity_names, entity_names[1:])]
    kg = from_named_triples(rows + [(entity_names[0], "other", entity_names[0])])
    tree = random_tree(np.random.default_rng(seed), kg.n_entities, kg.n_relations)
    assert parse(render(tree, kg.vocab), kg.vocab) == tree


def test_node_constructors_validate():
    with pytest.raises(QueryArityError):
        Intersect((Anchor(0),))
    with pytest.raises(QueryArityError):
        Union(())
    assert Complement(Anchor(1)).child == Anchor(1)
