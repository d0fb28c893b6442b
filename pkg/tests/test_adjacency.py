import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lqot import adjacency, kge
from lqot.adjacency import AdjacencyConfig, SparseRelationMatrix, calibrate_row

DELTA = 1e-4


def test_calibrate_with_observed_tail():
    out = calibrate_row(np.array([math.log(2), 0.0, 0.0]), {0}, 1, DELTA)
    assert out[0] == 1.0
    np.testing.assert_allclose(out[1:], [0.25, 0.25], rtol=0, atol=1e-15)


def test_calibrate_caps_below_one():
    out = calibrate_row(np.zeros(2), set(), 3, DELTA)
    assert out.tolist() == [1 - DELTA, 1 - DELTA]


def test_observed_tails_pinned_regardless_of_scores():
    out = calibrate_row(np.array([-50.0, -40.0, 30.0]), {0, 1}, 2, DELTA)
    assert out[0] == 1.0 and out[1] == 1.0


def test_calibrate_rejects_zero_tail_count():
    with pytest.raises(ValueError):
        calibrate_row(np.zeros(3), set(), 0, DELTA)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 20), elements=st.floats(-30, 30)),
       st.integers(1, 5), st.data())
def test_calibrated_values_stay_in_range(scores, n_t, data):
    observed = data.draw(st.sets(st.integers(0, len(scores) - 1), max_size=3))
    out = calibrate_row(scores, observed, n_t, DELTA)
    assert np.all(out >= 0) and np.all(out <= 1)
    rest = np.setdiff1d(np.arange(len(scores)), list(observed))
    assert np.all(out[rest] <= 1 - DELTA)
    assert all(out[o] == 1.0 for o in observed)


@pytest.fixture(scope="module")
def trained():
    from lqot.kg import synthetic_kg
    kg = synthetic_kg(n_entities=30, n_relations=3, n_edges=90, n_clusters=5, seed=3)
    config = kge.TrainConfig(dim=16, epochs=40)
    model, _ = kge.train(kge.init_model(kg.vocab, config), kg, config)
    return kg, model


def test_build_matrix_contract(trained):
    kg, model = trained
    for r in range(kg.n_relations):
        m = adjacency.build_matrix(model, kg, r, AdjacencyConfig(top_k=kg.n_entities))
        observed = {(h, t) for h, rel, t in kg.triples if rel == r}
        for i, j, v in zip(*m.triplets()):
            if (i, j) in observed:
                assert v == 1.0
            else:
                assert 0.0 < v <= 1 - DELTA
        assert all(m.entry(h, t) == 1.0 for h, t in observed)


def test_top_k_bounds_row_size(trained):
    kg, model = trained
    m = adjacency.build_matrix(model, kg, 0, AdjacencyConfig(top_k=1))
    for h in range(kg.n_entities):
        cols, _ = m.row(h)
        assert len(cols) <= 1 + len(kg.neighbors(h, 0))


def test_floor_drops_small_predictions(trained):
    kg, model = trained
    m = adjacency.build_matrix(model, kg, 1, AdjacencyConfig(top_k=kg.n_entities, floor=0.05))
    rows, cols, vals = m.triplets()
    assert np.all(vals >= 0.05)


def test_entry_defaults():
    m = SparseRelationMatrix.from_dense(0, np.array([[0.0, 1.0], [0.25, 0.0]]))
    assert adjacency.entry(m, 0, 0) == 0.0
    assert adjacency.entry(m, 0, 1) == 1.0
    assert adjacency.entry(m, 1, 0) == 0.25


def test_matrix_rejects_out_of_range_values():
    with pytest.raises(ValueError):
        SparseRelationMatrix(0, 2, [0], [1], [1.5])
    with pytest.raises(ValueError):
        SparseRelationMatrix(0, 2, [0, 0], [1, 1], [0.5, 0.5])


def test_boolean_matrix_matches_edges(chain_kg):
    m = adjacency.boolean_matrix(chain_kg, chain_kg.vocab.relation("r1"))
    a, b, c = (chain_kg.vocab.entity(x) for x in "abc")
    assert m.nnz == 2
    assert m.entry(a, b) == m.entry(a, c) == 1.0
    assert m.entry(b, c) == 0.0


@pytest.mark.parametrize("binary", [False, True])
def test_matrix_files_round_trip(tmp_path, trained, binary):
    kg, model = trained
    matrices = adjacency.build_all(model, kg, AdjacencyConfig(top_k=5))
    adjacency.save_matrices(tmp_path, matrices, binary=binary)
    back = adjacency.load_matrices(tmp_path, kg.vocab)
    assert back.keys() == matrices.keys()
    for r in matrices:
        assert back[r] == matrices[r]
        assert np.array_equal(back[r].dense(), matrices[r].dense())


def test_text_reader_checks_header(tmp_path):
    p = tmp_path / "0000.adj"
    p.write_text("relation\tr0\n")
    with pytest.raises(ValueError, match="header"):
        adjacency.read_matrix(p)
