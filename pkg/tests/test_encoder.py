import math

import numpy as np
import pytest

from medgraph import encoder as enc
from medgraph.errors import DimensionMismatch
from medgraph.graph import ClinicalGraph
from medgraph.logic import Grammar, parse_clause
from medgraph.synth import STANDARD_CLAUSES, generate, standard_config


@pytest.fixture(scope="module")
def fixture_graph():
    config = standard_config(n_events=30, n_patients=10, n_physicians=3, violation_rate=0.1, extreme_rate=0.0)
    graph, _truth = generate(config)
    return graph


@pytest.fixture(scope="module")
def fixture_params(fixture_graph):
    return enc.init_params(fixture_graph.schema, d=6, d_z=4, n_layers=2, seed=1)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def test_time_kernel_analytic():
    assert enc.time_kernel(0, 3.7) == 1.0
    assert enc.time_kernel(123.0, 0.0) == 1.0
    lam = 0.25
    assert enc.time_kernel(math.log(2) / lam, lam) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError):
        enc.time_kernel(-1.0, 1.0)


def test_attention_singleton(fixture_graph, fixture_params):
    hidden = enc.FeatureMap(fixture_graph.schema).matrix(fixture_graph)
    weights = enc.attention_coeffs(0, [(0, "self", 0)], fixture_params, hidden)
    assert weights.tolist() == [1.0]


def test_attention_identical_scores_split_evenly(fixture_graph, fixture_params):
    hidden = enc.FeatureMap(fixture_graph.schema).matrix(fixture_graph)
    neighborhood = [(0, "self", 0), (0, "self", 0)]
    weights = enc.attention_coeffs(0, neighborhood, fixture_params, hidden)
    assert weights == pytest.approx([0.5, 0.5], abs=1e-12)


def test_attention_shift_invariance(fixture_graph, fixture_params):
    hidden = enc.FeatureMap(fixture_graph.schema).matrix(fixture_graph)
    neighborhood = [(0, "self", 0), (1, "consultation", 3), (2, "consultation", 7)]
    base = enc.attention_coeffs(0, neighborhood, fixture_params, hidden)
    shifted = fixture_params.copy()
    shifted.rel_bias = shifted.rel_bias + 11.5  # the same constant enters every score
    after = enc.attention_coeffs(0, neighborhood, shifted, hidden)
    assert after == pytest.approx(base, abs=1e-9)


def test_attention_weights_sum_to_one(fixture_graph, fixture_params):
    result = enc._forward(fixture_graph, fixture_params)
    seg = result.segments
    for layer in result.layers:
        sums = np.zeros(seg.n)
        np.add.at(sums, seg.center, layer.alpha)
        assert np.abs(sums - 1.0).max() <= 1e-9


# ---------------------------------------------------------------------------
# encode
# ---------------------------------------------------------------------------

def _dense_reference(graph, params, t_now, window):
    """Independent per-node re-implementation of the layer recurrence."""
    H = enc.FeatureMap(graph.schema).matrix(graph)
    for W in params.layers:
        d = W.shape[1]
        out = np.zeros((graph.node_count, d))
        for v in graph.node_ids():
            neighborhood = graph.temporal_neighborhood(v, t_now, window)
            q = H[v] @ W
            scores = []
            for u, rel, dt in neighborhood:
                r = params.rel_index(rel)
                scores.append(
                    float(q @ (H[u] @ W)) / math.sqrt(d)
                    + float(params.rel_bias[r])
                    - float(params.time_decay[r]) * (dt / window)
                )
            z = np.array(scores) / params.temperature
            z = z - z.max()
            e = np.exp(z)
            alpha = e / e.sum()
            mixed = np.zeros(d)
            for a, (u, _rel, _dt) in zip(alpha, neighborhood):
                mixed += a * (H[u] @ W)
            out[v] = 1.0 / (1.0 + np.exp(-mixed))
        H = out
    mu = H @ params.head_mu
    lv = np.clip(H @ params.head_lv, -enc.LOGVAR_CLAMP, enc.LOGVAR_CLAMP)
    return mu, lv


def test_encode_matches_dense_reference(fixture_graph, fixture_params):
    t_now = fixture_graph.stats().t_max
    window = t_now + 1
    result = enc.encode(fixture_graph, fixture_params, t_now=t_now, window=window)
    mu_ref, lv_ref = _dense_reference(fixture_graph, fixture_params, t_now, window)
    assert np.abs(result.mu - mu_ref).max() <= 1e-12
    assert np.abs(result.lv - lv_ref).max() <= 1e-12


def test_encode_returns_node_embeddings(fixture_graph, fixture_params):
    result = enc.encode(fixture_graph, fixture_params)
    embedding = result[0]
    assert embedding.mean.shape == (fixture_params.d_z,)
    assert np.all(np.abs(embedding.log_variance) <= enc.LOGVAR_CLAMP)
    assert len(result) == fixture_graph.node_count


def test_encode_zero_weights_give_half_activations(fixture_graph, fixture_params):
    params = fixture_params.copy()
    for W in params.layers:
        W[:] = 0.0
    params.head_mu[:] = 0.0
    params.head_lv[:] = 0.0
    cache = enc._forward(fixture_graph, params)
    assert np.all(cache.hidden == 0.5)
    assert np.all(cache.mu == 0.0)


def test_encode_isolated_node_self_collapse(fixture_graph):
    schema = fixture_graph.schema
    graph = ClinicalGraph(schema)
    graph.add_node("patient", {"sex": "female", "age": 30, "blood_type": "o"})
    params = enc.init_params(schema, d=5, d_z=3, n_layers=1, seed=2)
    cache = enc._forward(graph, params)
    features = enc.FeatureMap(schema).matrix(graph)
    expected = 1.0 / (1.0 + np.exp(-(features[0] @ params.layers[0])))
    assert cache.hidden[0] == pytest.approx(expected, abs=1e-12)


def test_encode_permutation_equivariant(fixture_graph, fixture_params):
    graph = fixture_graph
    rng = np.random.default_rng(9)
    perm = rng.permutation(graph.node_count)  # perm[i] = new id of old node i
    permuted = ClinicalGraph(graph.schema)
    order = np.argsort(perm)  # old ids in new insertion order
    for old in order:
        permuted.add_node(graph.node_kind(int(old)), graph.node_attrs(int(old)))
    for e in graph.edges():
        permuted.add_edge(int(perm[e.src]), int(perm[e.dst]), e.relation, e.t)
    base = enc.encode(graph, fixture_params)
    moved = enc.encode(permuted, fixture_params)
    for old in range(graph.node_count):
        assert np.abs(base.mu[old] - moved.mu[perm[old]]).max() <= 1e-12


def test_encode_dimension_mismatch(fixture_graph):
    other_schema = generate(standard_config(n_events=10, n_patients=5, n_physicians=2))[0].schema
    params = enc.init_params(other_schema, d=4, d_z=2)
    wrong = enc.EncoderParams(
        relations=params.relations,
        layers=[np.zeros((3, 4)), params.layers[1]],
        head_mu=params.head_mu,
        head_lv=params.head_lv,
        rel_bias=params.rel_bias,
        time_decay=params.time_decay,
    )
    with pytest.raises(DimensionMismatch):
        enc.encode(fixture_graph, wrong)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def test_recon_loglik_goldens(fixture_params):
    z = np.zeros(fixture_params.d_z)
    rel = fixture_params.relations[0]
    assert enc.recon_loglik(z, z, rel, fixture_params, "observed") == pytest.approx(math.log(0.5), abs=1e-12)
    other = np.ones(fixture_params.d_z)
    assert enc.recon_loglik(z, other, rel, fixture_params, "observed") == pytest.approx(math.log(0.5), abs=1e-12)
    big = np.full(fixture_params.d_z, math.sqrt(20.0 / fixture_params.d_z))
    expected = -math.log1p(math.exp(-20.0))
    value = enc.recon_loglik(big, big, rel, fixture_params, "observed")
    assert value == pytest.approx(expected, rel=1e-9)
    assert value == pytest.approx(-2.0611536e-9, rel=1e-4)
    assert enc.recon_loglik(z, other, rel, fixture_params, "negative") <= 0.0


def test_kl_term_goldens():
    zero = enc.NodeEmbedding(mean=np.zeros(3), log_variance=np.zeros(3))
    assert enc.kl_term(zero) == 0.0
    one = enc.NodeEmbedding(mean=np.array([1.0]), log_variance=np.array([0.0]))
    assert enc.kl_term(one) == pytest.approx(0.5, abs=1e-12)


def test_kl_term_matches_monte_carlo():
    rng = np.random.default_rng(4)
    mu = rng.normal(size=4)
    lv = rng.normal(scale=0.5, size=4)
    emb = enc.NodeEmbedding(mean=mu, log_variance=lv)
    n = 1_000_000
    sigma = np.exp(lv / 2.0)
    z = mu + sigma * rng.normal(size=(n, 4))
    log_q = -0.5 * (((z - mu) / sigma) ** 2 + lv + math.log(2 * math.pi)).sum(axis=1)
    log_p = -0.5 * (z**2 + math.log(2 * math.pi)).sum(axis=1)
    samples = log_q - log_p
    estimate = samples.mean()
    stderr = samples.std(ddof=1) / math.sqrt(n)
    assert abs(enc.kl_term(emb) - estimate) <= 3 * stderr


def test_kl_nonnegative_property():
    rng = np.random.default_rng(8)
    for _ in range(200):
        emb = enc.NodeEmbedding(mean=rng.normal(size=5), log_variance=rng.normal(scale=2, size=5))
        assert enc.kl_term(emb) >= 0.0
    assert enc.kl_term(enc.NodeEmbedding(mean=np.zeros(5), log_variance=np.zeros(5))) == 0.0


def test_negative_samples_deterministic(fixture_graph):
    assert enc.negative_samples(fixture_graph, 13) == enc.negative_samples(fixture_graph, 13)
    assert enc.negative_samples(fixture_graph, 13) != enc.negative_samples(fixture_graph, 14)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def test_zero_edge_graph_recon_gradient_is_zero(fixture_graph):
    schema = fixture_graph.schema
    graph = ClinicalGraph(schema)
    for _ in range(4):
        graph.add_node("patient", {"sex": "male", "age": 20, "blood_type": "a"})
    params = enc.init_params(schema, d=4, d_z=2, seed=3)
    grads = enc.gradients(graph, params, "recon")
    assert all(np.all(g == 0.0) for g in grads.values())


def test_kl_gradient_zero_at_prior(fixture_graph):
    params = enc.init_params(fixture_graph.schema, d=4, d_z=2, seed=3)
    params.head_mu[:] = 0.0
    params.head_lv[:] = 0.0
    grads = enc.gradients(fixture_graph, params, "kl")
    for g in grads.values():
        assert np.abs(g).max() <= 1e-15


def _fd_check(graph, params, selector, grammar, weights, n_probe=25, eps=1e-5, seed=7):
    grads = enc.gradients(graph, params, selector, grammar, weights, seed=seed)
    rng = np.random.default_rng(0)
    worst = 0.0
    for name, arr in params.arrays().items():
        flat_n = arr.size
        idxs = range(flat_n) if flat_n <= n_probe else rng.choice(flat_n, n_probe, replace=False)
        for i in idxs:
            plus, minus = params.copy(), params.copy()
            if name == "temperature":
                plus.temperature += eps
                minus.temperature -= eps
            else:
                plus.arrays()[name].ravel()[i] += eps
                minus.arrays()[name].ravel()[i] -= eps
            hi = enc.loss_value(graph, plus, selector, grammar, weights, seed=seed)
            lo = enc.loss_value(graph, minus, selector, grammar, weights, seed=seed)
            fd = (hi - lo) / (2 * eps)
            an = float(grads[name].ravel()[i])
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    return worst


@pytest.mark.parametrize("selector", ["recon", "kl", "soft_consistency", "total"])
def test_gradients_match_finite_differences(fixture_graph, fixture_params, selector):
    grammar = Grammar(clauses=[parse_clause(t, fixture_graph.schema) for t in STANDARD_CLAUSES])
    grammar.refresh_stats(fixture_graph)
    weights = enc.LossWeights(kl=0.001, soft_consistency=0.1)
    worst = _fd_check(fixture_graph, fixture_params, selector, grammar, weights)
    assert worst <= 1e-4, f"{selector}: max relative error {worst}"


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_round_trips_exactly(fixture_graph, fixture_params, tmp_path):
    path = tmp_path / "params.json"
    fixture_params.save(path)
    loaded = enc.EncoderParams.load(path)
    for name, arr in fixture_params.arrays().items():
        assert np.array_equal(arr, loaded.arrays()[name]), name
    assert loaded.relations == fixture_params.relations
    assert loaded.seed == fixture_params.seed
    before = enc.encode(fixture_graph, fixture_params)
    after = enc.encode(fixture_graph, loaded)
    assert np.array_equal(before.mu, after.mu)
