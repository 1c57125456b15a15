import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from distqn.errors import DisconnectedGraphError, DistqnError
from distqn.graph import (
    Topology,
    extreme_eigenvalues,
    generate_connected_geometric,
    generate_random_geometric,
    is_connected,
    metropolis_weights,
    network_from_dict,
    network_to_dict,
)

PATH3 = Topology(3, ((0, 1), (1, 2)))


def test_single_node_has_no_edges():
    t = generate_random_geometric(1, 5)
    assert t.num_edges == 0
    assert is_connected(t)


def test_two_nodes_connected_iff_within_radius():
    r = np.sqrt(np.log(2) / 2)
    seen = set()
    for seed in range(40):
        t = generate_random_geometric(2, seed)
        dist = np.linalg.norm(t.coordinates[0] - t.coordinates[1])
        assert t.num_edges == (1 if dist <= r else 0)
        seen.add(t.num_edges)
    assert seen == {0, 1}


def test_geometric_generation_is_reproducible():
    a = generate_random_geometric(30, 7)
    b = generate_random_geometric(30, 7)
    assert a.edges == b.edges
    assert np.array_equal(a.coordinates, b.coordinates)
    assert generate_random_geometric(30, 8).edges != a.edges


def test_connected_generator_redraws_with_next_seed():
    assert not is_connected(generate_random_geometric(30, 2))
    t, used = generate_connected_geometric(30, 2)
    assert used == 3
    assert is_connected(t)
    assert t.edges == generate_random_geometric(30, 3).edges


def test_connected_generator_gives_up():
    # with n=2 the radius is ~0.59, so a single attempt can easily fail
    failing = next(s for s in range(100) if generate_random_geometric(2, s).num_edges == 0)
    with pytest.raises(DisconnectedGraphError):
        generate_connected_geometric(2, failing, max_attempts=1)


def test_is_connected_examples():
    assert is_connected(Topology(1, ()))
    assert not is_connected(Topology(2, ()))
    assert is_connected(PATH3)
    assert not is_connected(Topology(4, ((0, 1), (2, 3))))


def test_topology_rejects_bad_edges():
    with pytest.raises(ValueError):
        Topology(3, ((1, 1),))
    with pytest.raises(ValueError):
        Topology(3, ((0, 1), (1, 0)))
    with pytest.raises(ValueError):
        Topology(3, ((0, 3),))


def test_metropolis_path3():
    w = metropolis_weights(PATH3)
    W = w.dense()
    assert W[0, 1] == W[1, 2] == pytest.approx(1 / 5, abs=1e-15)
    assert W[0, 2] == 0
    assert W[0, 0] == pytest.approx(4 / 5, abs=1e-15)
    assert W[1, 1] == pytest.approx(3 / 5, abs=1e-15)
    assert W[2, 2] == pytest.approx(4 / 5, abs=1e-15)


def test_metropolis_two_nodes():
    W = metropolis_weights(Topology(2, ((0, 1),))).dense()
    np.testing.assert_allclose(W, [[2 / 3, 1 / 3], [1 / 3, 2 / 3]], atol=1e-15)


def test_metropolis_triangle():
    W = metropolis_weights(Topology(3, ((0, 1), (0, 2), (1, 2)))).dense()
    np.testing.assert_allclose(W, np.full((3, 3), 1 / 5) + np.eye(3) * 2 / 5, atol=1e-15)


def test_metropolis_rejects_disconnected_and_singletons():
    with pytest.raises(DisconnectedGraphError):
        metropolis_weights(Topology(3, ((0, 1),)))
    with pytest.raises(DistqnError):
        metropolis_weights(Topology(1, ()))


def test_extreme_eigenvalues_two_nodes():
    lam1, lamn = extreme_eigenvalues(metropolis_weights(Topology(2, ((0, 1),))))
    assert lam1 == pytest.approx(1.0, abs=1e-12)
    assert lamn == pytest.approx(1 / 3, abs=1e-12)


def test_extreme_eigenvalues_path3_against_characteristic_polynomial():
    w = metropolis_weights(PATH3)
    roots = np.sort(np.roots(np.poly(w.dense())).real)
    lam1, lamn = w.extreme_eigenvalues
    assert lam1 == pytest.approx(1.0, abs=1e-10)
    assert lamn == pytest.approx(roots[0], abs=1e-10)
    # closed form: eigenvalues 1, 4/5, 2/5
    assert lamn == pytest.approx(2 / 5, abs=1e-10)


def _check_weight_invariants(w):
    W = w.dense()
    assert np.array_equal(W, W.T)
    np.testing.assert_allclose(W.sum(axis=1), 1.0, atol=1e-12)
    assert 0 < w.w_min <= w.w_max < 1
    support = {(i, j) for i, j in zip(*np.nonzero(W)) if i < j}
    assert support == set(w.topology.edges)
    assert w.lambda_1 == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 40), seed=st.integers(0, 2**63))
def test_generated_weights_satisfy_invariants(n, seed):
    t, _ = generate_connected_geometric(n, seed)
    _check_weight_invariants(metropolis_weights(t))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 25), seed=st.integers(0, 10**6), data=st.data())
def test_metropolis_is_permutation_equivariant(n, seed, data):
    t, _ = generate_connected_geometric(n, seed)
    perm = np.array(data.draw(st.permutations(range(n))))
    W = metropolis_weights(t).dense()
    Wp = metropolis_weights(t.relabel(perm)).dense()
    # node i became perm[i]
    np.testing.assert_allclose(Wp[np.ix_(perm, perm)], W, atol=1e-15)


def test_laplacian_apply_matches_dense_and_vanishes_at_consensus(rng):
    t, _ = generate_connected_geometric(20, 4)
    w = metropolis_weights(t)
    X = rng.standard_normal((20, 3))
    np.testing.assert_allclose(w.laplacian_apply(X), (np.eye(20) - w.dense()) @ X, atol=1e-13)
    np.testing.assert_allclose(w.mix(X), w.dense() @ X, atol=1e-13)
    C = np.tile(rng.standard_normal(3), (20, 1))
    assert np.all(w.laplacian_apply(C) == 0.0)
    assert w.disagreement(X) == pytest.approx(float(np.sum(X * w.laplacian_apply(X))), rel=1e-12)


def test_network_json_round_trip(tmp_path):
    t, _ = generate_connected_geometric(15, 9)
    w = metropolis_weights(t)
    doc = json.loads(json.dumps(network_to_dict(t, w)))
    t2, w2 = network_from_dict(doc)
    assert t2 == t
    assert np.array_equal(t2.coordinates, t.coordinates)
    assert np.array_equal(w2.diagonal, w.diagonal)
    assert np.array_equal(w2.edge_weights, w.edge_weights)
