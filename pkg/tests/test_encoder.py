import numpy as np
import pytest
from conftest import edges_graph

from netalign import encoder as enc
from netalign.encoder import EmbeddingPair, EncoderParams
from netalign.errors import NonFiniteError, ShapeError
from netalign.ot import (
    SamplingShift,
    TransportPlan,
    fgw_objective,
    gw_term,
    uniform_plan,
    wasserstein_term,
)


def _params(W1, b1, W2, b2):
    arrays = [np.asarray(a, dtype=float) for a in (W1, b1, W2, b2)]
    return EncoderParams(*arrays)


def _zero_params(in_dim, hidden):
    return _params(
        np.zeros((in_dim, hidden)), np.zeros(hidden), np.zeros((hidden, hidden)), np.zeros(hidden)
    )


def test_init_shapes():
    p = enc.init_encoder(5)
    assert p.W1.shape == (5, 128)
    assert p.W2.shape == (128, 128)
    assert not p.b1.any() and not p.b2.any()
    assert p.step == 0


def test_init_is_seeded():
    a = enc.init_encoder(4, hidden=8, out=8, seed=3)
    b = enc.init_encoder(4, hidden=8, out=8, seed=3)
    np.testing.assert_array_equal(a.W1, b.W1)
    np.testing.assert_array_equal(a.W2, b.W2)


def test_residual_needs_matching_widths():
    with pytest.raises(ValueError):
        enc.init_encoder(4, hidden=8, out=16)


def test_zero_params_map_to_zero(rng):
    E = enc.encode(_zero_params(3, 4), rng.normal(size=(5, 3)))
    assert not E.any()


def test_zero_input_maps_to_zero():
    E = enc.encode(enc.init_encoder(3, hidden=4, out=4), np.zeros((2, 3)))
    assert not E.any()


def test_scalar_forward_by_hand():
    # z1 = 1.5*2 - 1 = 2, h = 2, z2 = 2*3 + 0.5 = 6.5, E = 2 + 6.5
    p = _params([[2.0]], [-1.0], [[3.0]], [0.5])
    assert enc.encode(p, np.array([[1.5]]))[0, 0] == pytest.approx(8.5)


def test_feature_width_checked(rng):
    with pytest.raises(ShapeError):
        enc.encode(enc.init_encoder(3, hidden=4, out=4), rng.normal(size=(2, 5)))


def test_zero_embeddings_give_unit_costs(ten_node_graph):
    E = EmbeddingPair(np.zeros((10, 3)), np.zeros((10, 3)))
    costs = enc.cost_matrices(E, ten_node_graph, ten_node_graph)
    np.testing.assert_array_equal(costs.M, np.ones((10, 10)))
    np.testing.assert_array_equal(costs.C1.toarray(), ten_node_graph.adjacency.toarray())


def test_matched_orthonormal_rows():
    g = edges_graph(3, [(0, 1), (1, 2)])
    E = EmbeddingPair(np.eye(3), np.eye(3))
    costs = enc.cost_matrices(E, g, g)
    np.testing.assert_allclose(np.diag(costs.M), np.exp(-1.0))
    # non-edges carry exactly zero cost
    assert costs.C1.toarray()[0, 2] == 0.0
    c = costs.C1.toarray()
    np.testing.assert_array_equal(c, c.T)


def test_zero_params_loss_is_plan_mass():
    g = edges_graph(3, [(0, 1)])
    p = _zero_params(2, 3)
    F = np.ones((3, 2))
    loss, grads = enc.loss_and_grad(p, F, F, g, g, uniform_plan(3, 3), SamplingShift(0.0), 0.0)
    assert loss == pytest.approx(1.0)
    assert np.isfinite(grads["b2"]).all()


def _toy():
    rng = np.random.default_rng(7)
    g1 = edges_graph(3, [(0, 1), (1, 2)])
    g2 = edges_graph(3, [(0, 1), (1, 2), (0, 2)])
    F1 = rng.normal(size=(3, 3))
    F2 = rng.normal(size=(3, 3))
    p = _params(
        rng.normal(scale=0.5, size=(3, 4)),
        rng.normal(scale=0.3, size=4),
        rng.normal(scale=0.5, size=(4, 4)),
        rng.normal(scale=0.3, size=4),
    )
    S = rng.random((3, 3)) + 0.1
    S /= S.sum()
    mu = np.full(3, 1 / 3)
    return p, F1, F2, g1, g2, TransportPlan(S, mu, mu)


def test_loss_matches_objective_on_encoded_costs():
    p, F1, F2, g1, g2, S = _toy()
    shift = SamplingShift(0.05)
    loss, _ = enc.loss_and_grad(p, F1, F2, g1, g2, S, shift, 0.6)
    costs = enc.cost_matrices(enc.embed_pair(p, F1, F2), g1, g2)
    assert loss == pytest.approx(fgw_objective(costs, S, shift, 0.6), rel=1e-12)


def _random_case(seed):
    rng = np.random.default_rng(seed)
    n1, n2 = (int(n) for n in rng.integers(2, 6, size=2))
    width, hidden = int(rng.integers(1, 4)), int(rng.integers(2, 5))

    def _graph(n):
        pairs = [(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < 0.5]
        return edges_graph(n, pairs)

    p = _params(
        rng.normal(scale=0.5, size=(width, hidden)),
        rng.normal(scale=0.3, size=hidden),
        rng.normal(scale=0.5, size=(hidden, hidden)),
        rng.normal(scale=0.3, size=hidden),
    )
    S = rng.random((n1, n2)) + 0.1
    S /= S.sum()
    plan = TransportPlan(S, np.full(n1, 1 / n1), np.full(n2, 1 / n2))
    F1, F2 = rng.normal(size=(n1, width)), rng.normal(size=(n2, width))
    shift = SamplingShift(float(rng.uniform(0.0, 0.1)))
    return p, F1, F2, _graph(n1), _graph(n2), plan, shift, float(rng.uniform(0.0, 1.0))


def _central_differences(p, name, loss_at, h=1e-5):
    base = p.tensors()[name]
    numeric = np.zeros_like(base)
    for idx in np.ndindex(base.shape):
        plus, minus = base.copy(), base.copy()
        plus[idx] += h
        minus[idx] -= h
        lp = loss_at(_params(**(p.tensors() | {name: plus})))
        lm = loss_at(_params(**(p.tensors() | {name: minus})))
        numeric[idx] = (lp - lm) / (2 * h)
    return numeric


@pytest.mark.parametrize("alpha", [0.0, 0.6, 1.0])
def test_gradient_matches_central_differences(alpha):
    p, F1, F2, g1, g2, S = _toy()
    shift = SamplingShift(0.05)
    _, grads = enc.loss_and_grad(p, F1, F2, g1, g2, S, shift, alpha)

    def loss_at(q):
        return enc.loss_and_grad(q, F1, F2, g1, g2, S, shift, alpha)[0]

    for name in enc.PARAM_NAMES:
        numeric = _central_differences(p, name, loss_at)
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_on_random_small_instances(seed):
    p, F1, F2, g1, g2, S, shift, alpha = _random_case(seed)
    _, grads = enc.loss_and_grad(p, F1, F2, g1, g2, S, shift, alpha)

    def loss_at(q):
        return enc.loss_and_grad(q, F1, F2, g1, g2, S, shift, alpha)[0]

    for name in enc.PARAM_NAMES:
        numeric = _central_differences(p, name, loss_at)
        np.testing.assert_allclose(grads[name], numeric, rtol=1e-4, atol=1e-8)


def _collapsing_params(in_dim):
    # W1 = 0 sends every feature row to the same embedding (1, 2, 0.5)
    return _params(np.zeros((in_dim, 3)), [1.0, 2.0, 0.5], np.zeros((3, 3)), np.zeros(3))


def test_identical_rows_zero_the_structure_term(ten_node_graph, rng):
    F1, F2 = rng.normal(size=(10, 4)), rng.normal(size=(10, 4))
    emb = enc.embed_pair(_collapsing_params(4), F1, F2)
    np.testing.assert_array_equal(emb.E1, np.tile([1.0, 2.0, 0.5], (10, 1)))
    costs = enc.cost_matrices(emb, ten_node_graph, ten_node_graph)
    c = np.exp(-5.25)
    np.testing.assert_array_equal(costs.M, np.full((10, 10), c))
    # identical graphs matched one to one: every edge pair meets an equal edge
    S = np.eye(10) / 10
    assert gw_term(costs.C1, costs.C2, S) == pytest.approx(0.0, abs=1e-18)
    assert wasserstein_term(costs.M, S) == pytest.approx(c * S.sum(), rel=1e-12)


def test_collapsed_loss_is_the_constant_times_plan_mass(ten_node_graph, rng):
    F = rng.normal(size=(10, 4))
    S = TransportPlan(np.eye(10) / 10, np.full(10, 0.1), np.full(10, 0.1))
    loss, _ = enc.loss_and_grad(
        _collapsing_params(4), F, F, ten_node_graph, ten_node_graph, S, SamplingShift(0.0), 0.5
    )
    assert loss == pytest.approx(0.5 * np.exp(-5.25), rel=1e-12)


def test_collapsed_embeddings_reach_the_lower_bound():
    g = edges_graph(3, [(0, 1), (1, 2)])
    p = _params(np.full((2, 2), 10.0), np.zeros(2), np.zeros((2, 2)), np.zeros(2))
    F = np.ones((3, 2))
    loss, _ = enc.loss_and_grad(p, F, F, g, g, uniform_plan(3, 3), SamplingShift(0.0), 0.5)
    # every similarity is clipped at 50, so the loss sits just above zero
    assert 0.0 <= loss <= 1e-20


def test_adam_zero_gradient_keeps_params():
    p = enc.init_encoder(3, hidden=4, out=4)
    zero = {k: np.zeros_like(t) for k, t in p.tensors().items()}
    q = enc.adam_step(p, zero)
    for k in enc.PARAM_NAMES:
        np.testing.assert_array_equal(q.tensors()[k], p.tensors()[k])
        assert not q.m[k].any()
    assert q.step == 1


def test_adam_first_step_by_hand():
    p = _params([[1.0]], [0.0], [[1.0]], [0.0])
    g = {k: np.full_like(t, 0.5) for k, t in p.tensors().items()}
    q = enc.adam_step(p, g, lr=1e-4)
    # m_hat = 0.5, v_hat = 0.25
    expected = 1.0 - 1e-4 * 0.5 / (0.5 + 1e-8)
    assert q.W1[0, 0] == pytest.approx(expected, abs=1e-15)
    assert q.m["W1"][0, 0] == pytest.approx(0.05)
    assert q.v["W1"][0, 0] == pytest.approx(0.00025)


def test_adam_rejects_non_finite_gradient():
    p = enc.init_encoder(2, hidden=2, out=2)
    g = {k: np.zeros_like(t) for k, t in p.tensors().items()}
    g["b1"][0] = np.nan
    with pytest.raises(NonFiniteError):
        enc.adam_step(p, g)


def test_mean_pairwise_distance():
    E = EmbeddingPair(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))
    assert enc.mean_pairwise_distance(E) == pytest.approx(5.0)


def test_encode_is_permutation_equivariant(rng):
    p = enc.init_encoder(4, hidden=6, out=6, seed=2)
    F = rng.normal(size=(7, 4))
    perm = rng.permutation(7)
    np.testing.assert_allclose(enc.encode(p, F[perm]), enc.encode(p, F)[perm], rtol=0, atol=1e-14)
