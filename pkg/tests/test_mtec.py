import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtecache.errors import ConfigError, NumericalError
from mtecache.ingest import SynthConfig, synth_trace
from mtecache.mtec import (
    MtecConfig,
    MtecModel,
    accuracy,
    build_model,
    categorize,
    forward,
    placement_ranking,
    predict_topk,
    rank_desc,
    total_loss,
    train,
)
from mtecache.nn.layers import EncoderConfig
from mtecache.pipeline import segment_samples, window_event_counts

SMALL = EncoderConfig(layers=2, model_dim=16, heads=4, mlp_layers=1, mlp_size=32)


def small_model(n_c=12, lookback=5, seed=0, **kw):
    return build_model(MtecConfig(encoder=SMALL, k=3, seed=seed, **kw), n_c, lookback)


def toy_samples(n_c=12, lookback=5, k=3, seed=0):
    tr = synth_trace(SynthConfig(n_contents=n_c, duration=3000, n_events=4000, seed=seed))
    return segment_samples(window_event_counts(tr, n_c, 100), lookback=lookback, k=k)


def expected_param_count(enc, n_c, lookback):
    d, h, dh = enc.model_dim, enc.heads, enc.head_dim
    widths = [d] + [enc.mlp_size] * enc.mlp_layers + [d]
    mlp = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    layer = 4 * d + h * d * 3 * dh + h * dh * d + mlp
    def encoder(tokens):
        return enc.kernel_size * n_c * d + d + tokens * d + enc.layers * layer
    heads = 4 * (d * n_c + n_c)
    return 2 * encoder(lookback) + encoder(lookback + 1) + heads


# ---------------------------------------------------------------- build


def test_model6_builds_and_count_matches_enumeration():
    m = build_model(MtecConfig(k=20), 200, 9)
    assert m.n_parameters == expected_param_count(m.config.encoder, 200, 9)
    m2 = small_model()
    assert m2.n_parameters == expected_param_count(SMALL, 12, 5)


def test_same_seed_same_parameters():
    a, b = small_model(seed=4), small_model(seed=4)
    for name in a.store:
        np.testing.assert_array_equal(a.store[name].data, b.store[name].data)
    c = small_model(seed=5)
    assert not np.array_equal(a.store["fusion.weight"].data, c.store["fusion.weight"].data)


def test_paths_have_independent_parameters():
    groups = small_model().parameter_groups()
    assert {"tc", "rpp", "cls2", "fusion"} <= set(groups)
    assert groups["tc"] and not set(groups["tc"]) & set(groups["cls2"])


def test_heads_must_divide_model_dim():
    with pytest.raises(ConfigError):
        MtecConfig(encoder=EncoderConfig(model_dim=18, heads=4))


@pytest.mark.parametrize("weights", [(0, 0, 0, 0), (-0.1, 0.5, 0.3, 0.3), (1, 1, 1)])
def test_bad_loss_weights(weights):
    with pytest.raises(ConfigError):
        MtecConfig(loss_weights=weights)


# ---------------------------------------------------------------- forward


def test_zero_weight_model_scores_half():
    m = small_model()
    for p in m.store.values():
        p.data[...] = 0.0
    out = forward(m, np.random.default_rng(0).random((12, 5)))
    np.testing.assert_array_equal(out.scores.data, 0.5)


def test_append_adds_one_token_exactly():
    m = small_model()
    x = np.random.default_rng(1).random((3, 12, 5))
    out = forward(m, x)
    assert out.cls2_input.shape == (3, 12, 6)
    np.testing.assert_array_equal(out.cls2_input.data[..., :5], x)
    np.testing.assert_array_equal(out.cls2_input.data[..., 5], out.p_hat.data)


def test_forward_deterministic_and_batch_consistent():
    m = small_model()
    x = np.random.default_rng(2).random((4, 12, 5))
    a, b = forward(m, x), forward(m, x)
    np.testing.assert_array_equal(a.scores.data, b.scores.data)
    single = forward(m, x[2])
    np.testing.assert_allclose(single.scores.data, a.scores.data[2], atol=1e-12)
    np.testing.assert_allclose(a.p_hat.data.sum(axis=-1), 1.0, atol=1e-12)


def test_wrong_sample_shape():
    with pytest.raises(ValueError):
        forward(small_model(), np.zeros((12, 4)))


def test_non_finite_activation_names_layer():
    m = small_model()
    m.store["rpp.embed.weight"].data[0, 0] = np.nan
    with pytest.raises(NumericalError, match="rpp"):
        forward(m, np.ones((12, 5)))


def test_gaf_mode_runs_and_keeps_shapes():
    m = small_model(gaf_mode=True)
    out = forward(m, np.random.default_rng(3).random((2, 12, 5)))
    assert out.scores.shape == (2, 12) and out.cls2_input.shape == (2, 12, 6)


# ---------------------------------------------------------------- loss


def _outputs(seed=0):
    m = small_model(seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.random((4, 12, 5))
    y = (rng.random((4, 12)) < 0.3).astype(float)
    p = rng.dirichlet(np.ones(12), size=4)
    return forward(m, x), y, p, m


def test_weighted_sum_matches_hand_computation():
    out, y, p, _ = _outputs()
    total, parts = total_loss(out, y, p, (0.2, 0.4, 0.1, 0.3))
    hand = 0.2 * parts["rpp"] + 0.4 * parts["c1"] + 0.1 * parts["c2"] + 0.3 * parts["f"]
    assert abs(float(total.data) - hand) < 1e-12


@pytest.mark.parametrize("i,term", list(enumerate(["rpp", "c1", "c2", "f"])))
def test_one_hot_weights_isolate_term(i, term):
    out, y, p, _ = _outputs(1)
    w = [0.0] * 4
    w[i] = 1.0
    total, parts = total_loss(out, y, p, w)
    assert float(total.data) == parts[term]


def test_perfect_predictions_give_near_zero_loss():
    out, y, p, _ = _outputs(2)
    for t in (out.tc_scores, out.cls2_scores, out.scores):
        t.data = y.copy()
    out.p_hat.data = p.copy()
    total, _ = total_loss(out, y, p)
    assert float(total.data) < 1e-6


def test_gradients_reach_every_parameter_group():
    out, y, p, m = _outputs(3)
    total, _ = total_loss(out, y, p)
    m.store.zero_grad()
    total.backward()
    for group, names in m.parameter_groups().items():
        assert max(np.abs(m.store[n].grad).max() for n in names) > 0, group


# ---------------------------------------------------------------- prediction


def test_topk_all_when_k_is_n_c():
    pred = predict_topk(small_model(), np.random.default_rng(0).integers(0, 5, (12, 5)), 12)
    assert sorted(pred.topk.tolist()) == list(range(1, 13))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 12))
def test_topk_matches_full_sort(seed, k):
    m = small_model()
    x = np.random.default_rng(seed).integers(0, 6, (12, 5))
    pred = predict_topk(m, x, k)
    lo, hi = x.min(axis=0), x.max(axis=0)
    scaled = np.where(hi > lo, (x - lo) / np.where(hi > lo, hi - lo, 1), 0.0)  # per time step
    scores = forward(m, scaled).scores.data
    brute = sorted(range(12), key=lambda l: (-scores[l], l))[:k]
    assert pred.topk.tolist() == [b + 1 for b in brute]
    assert np.all(pred.p_hat >= 0) and abs(pred.p_hat.sum() - 1) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=1, max_size=30))
def test_ranking_invariant_under_increasing_transform(scores):
    s = np.array(scores, dtype=np.float64)
    np.testing.assert_array_equal(rank_desc(s), rank_desc(np.exp(s / 10) * 3 + 1))


def test_categorize_examples():
    topk = np.array([3, 1, 4, 2])
    p_hat = np.array([0.1, 0.2, 0.4, 0.3])
    pop, med = categorize(topk, p_hat, 1, 3)
    assert pop.tolist() == [3] and med.tolist() == [4, 2, 1]
    pop, med = categorize(topk, p_hat, 4, 0)
    assert sorted(pop.tolist()) == [1, 2, 3, 4] and med.size == 0
    pop, med = categorize(np.array([2, 1, 3]), np.array([0.3, 0.3, 0.4]), 2, 1)
    assert pop.tolist() == [3, 1] and med.tolist() == [2]
    pop, med = categorize(topk, p_hat, 1, 1)  # mediocre truncated
    assert pop.tolist() == [3] and med.tolist() == [4]


def test_accuracy_examples():
    assert accuracy([1, 2, 3, 4], [4, 3, 2, 1]) == 1.0
    assert accuracy([1, 2], [3, 4]) == 0.0
    assert accuracy([1, 2, 3, 4], [1, 2, 3, 9]) == 0.75
    with pytest.raises(ValueError):
        accuracy([1, 2], [1])


# ---------------------------------------------------------------- training


def test_zero_epochs_leaves_model_unchanged():
    m = small_model(epochs=0)
    before = m.store.state_dict()
    _, hist = train(m, toy_samples(), None)
    assert hist.rows == []
    for k, v in m.store.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_training_records_history_and_keeps_best_validation():
    s = toy_samples()
    tr, va, _ = s.chronological_split()
    m = small_model(epochs=4, batch_size=8, lr=1e-3)
    m, hist = train(m, tr, va)
    assert len(hist.rows) == 4
    assert set(hist.rows[0]) == {"epoch", "total", "rpp", "c1", "c2", "f", "val_accuracy"}
    acc = hist.column("val_accuracy")
    assert hist.best_epoch == int(np.argmax(acc)) + 1
    csv = hist.to_csv("# x\n").splitlines()
    assert csv[1] == "epoch,loss_total,loss_rpp,loss_c1,loss_c2,loss_f,val_accuracy"
    assert len(csv) == 6


def test_tc_dominated_weights_still_converge():
    s = toy_samples().take(np.arange(16))
    m = small_model(epochs=40, batch_size=4, lr=1e-3, loss_weights=(0, 1, 0, 1))
    _, hist = train(m, s)
    f = hist.column("f")
    assert f[-5:].mean() < 0.6 * f[:5].mean()


def test_divergence_raises():
    m = small_model(epochs=2, lr=1e-3)
    m.store["fusion.bias"].data[:] = np.nan
    with pytest.raises(NumericalError):
        train(m, toy_samples())


def test_checkpoint_roundtrip(tmp_path):
    m = small_model(seed=7)
    m.save(tmp_path / "m.ckpt", {"seed": 7})
    back, meta = MtecModel.load(tmp_path / "m.ckpt")
    assert meta["seed"] == 7 and back.config == m.config
    x = np.random.default_rng(0).random((12, 5))
    np.testing.assert_array_equal(forward(back, x).scores.data, forward(m, x).scores.data)


def test_placement_ranking_orders_topk_by_probability_then_rest_by_score():
    scores = np.array([0.9, 0.1, 0.8, 0.7, 0.2, 0.6])
    p_hat = np.array([0.1, 0.5, 0.3, 0.05, 0.0, 0.05])
    # Top-3 by score is {1, 3, 4}; by probability 3 > 1 > 4, then 6, 5, 2 by score
    assert placement_ranking(scores, p_hat, 3).tolist() == [3, 1, 4, 6, 5, 2]


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10**6))
def test_placement_ranking_is_a_permutation(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    r = placement_ranking(rng.random(n), rng.dirichlet(np.ones(n)), k)
    assert sorted(r.tolist()) == list(range(1, n + 1))
