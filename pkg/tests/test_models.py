import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brandrank.errors import ContractError, VocabularyError
from brandrank.gradcheck import ablation_configs, gradient_check, random_batch
from brandrank.models import (Model, action_transform, attend, backward, brand_repr, forward,
                              gru_step, init_params, make_config, param_shapes,
                              time_gated_gru_step, variant_name)


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def small(model="attn3m", mods=None, **kw):
    kw = {"hidden_size": 4, "feature_dim": 6, "brand_vocab_size": 5, **kw}
    return make_config(model, mods, **kw)


def batch_for(config, n=6, seq_len=3, seed=0):
    return random_batch(np.random.default_rng(seed), n, seq_len, config.feature_dim,
                        config.brand_vocab_size)


def zero_params(config):
    return {k: np.zeros(s) for k, s in param_shapes(config).items()}


# -- configs ------------------------------------------------------------------------

def test_variant_names_and_input_widths():
    assert variant_name(small("attn3m")) == "attn3m"
    assert variant_name(small("no_mod2")) == "no_mod2"
    assert variant_name(small("gru")) == "gru"
    assert small("attn3m").input_size == 6
    assert small("attn").input_size == 6 + 2 + 1
    assert small("no_mod1").brand_repr_mode == "features"


def test_config_contracts():
    with pytest.raises(ContractError):
        make_config("attn3m", brand_vocab_size=0)
    with pytest.raises(ContractError):
        make_config("attn", mods=[4], brand_vocab_size=3)
    with pytest.raises(ContractError):
        make_config("transformer")
    with pytest.raises(ContractError):
        make_config("attn", brand_repr_mode="bag")


def test_init_shapes_and_action_matrices_near_identity():
    cfg = small()
    params = init_params(cfg, 3)
    assert params["M_embed"].shape == (6, 5)
    assert params["enc_Wt"].shape == (6, 4) and params["enc_Qt"].shape == (1, 4)
    assert params["out_V"].shape == (2, 4)
    assert np.abs(params["M_click"] - np.eye(6)).max() <= 0.01
    assert np.abs(params["M_embed"]).max() <= 0.01
    assert small("gru").input_size == 9
    assert param_shapes(small("gru"))["out_V"] == (5, 4)


# -- brand representation and action transform ---------------------------------------

def test_brand_repr_modes():
    params = {"M_embed": np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])}
    v = np.array([0.1, 0.2, 0.3])
    np.testing.assert_array_equal(brand_repr(1, v, params, "features"), v)
    np.testing.assert_array_equal(brand_repr(1, np.zeros(3), params, "combined"), [2.0, 4.0, 6.0])
    np.testing.assert_array_equal(brand_repr(0, v, params, "one_hot"), [1.0, 3.0, 5.0])
    np.testing.assert_allclose(brand_repr(0, v, {"M_embed": np.zeros((3, 2))}, "combined"), v)
    with pytest.raises(VocabularyError):
        brand_repr(2, v, params, "combined")


def test_action_transform_examples():
    r = np.array([1.0, 2.0])
    toy = {"M_click": np.array([[1.0, 2.0], [3.0, 4.0]]), "M_purchase": np.zeros((2, 2))}
    np.testing.assert_array_equal(action_transform(r, [0.0, 1.0], toy), [5.0, 11.0])
    np.testing.assert_array_equal(action_transform(r, [1.0, 0.0], toy), [0.0, 0.0])
    ident = {"M_click": np.eye(2), "M_purchase": np.eye(2)}
    np.testing.assert_array_equal(action_transform(r, [0.0, 1.0], ident), r)
    np.testing.assert_array_equal(action_transform(r, [1.0, 0.0], toy, False), [1.0, 2.0, 1.0, 0.0])


# -- GRU cells ------------------------------------------------------------------------

def cell_params(H=1, D=1, value=0.0, **over):
    p = {f"enc_{k}": np.full((D if k.startswith("W") else H, H), value)
         for k in ("Wz", "Uz", "Wr", "Ur", "Wh", "Uh", "Wt")}
    p["enc_Qt"] = np.full((1, H), value)
    for k, v in over.items():
        p[f"enc_{k}"] = np.full_like(p[f"enc_{k}"], v)
    return p


def test_gru_zero_weights():
    p = cell_params(H=3, D=2)
    np.testing.assert_array_equal(gru_step(np.ones((1, 2)), np.zeros((1, 3)), p), 0.0)
    np.testing.assert_array_equal(gru_step(np.ones((1, 2)), np.ones((1, 3)), p), 0.5)


def test_gru_scalar_by_hand():
    p = cell_params(value=0.1)
    x, s = 1.0, 0.5
    z = 1 / (1 + math.exp(-(0.1 * x + 0.1 * s)))
    r = z
    c = math.tanh(0.1 * x + 0.1 * r * s)
    expected = z * c + (1 - z) * s
    assert gru_step(np.array([[x]]), np.array([[s]]), p)[0, 0] == pytest.approx(expected, abs=1e-15)


def test_time_gate_zero_weights():
    p = cell_params(H=2, D=2)
    s_prev = np.array([[1.0, -0.4]])
    out = time_gated_gru_step(np.ones((1, 2)), s_prev, np.array([3.0]), p)
    np.testing.assert_allclose(out, 0.5 * s_prev, atol=1e-15)
    assert sig(sig(0.0)) == pytest.approx(0.62246, abs=1e-5)


def test_time_gate_dead_when_qt_zero():
    rng = np.random.default_rng(0)
    p = {k: rng.normal(size=v.shape) for k, v in cell_params(H=3, D=2).items()}
    p["enc_Qt"][:] = 0.0
    x, s = rng.normal(size=(1, 2)), rng.normal(size=(1, 3)) * 0.5
    a = time_gated_gru_step(x, s, np.array([1.0]), p)
    b = time_gated_gru_step(x, s, np.array([1e6]), p)
    np.testing.assert_array_equal(a, b)


def test_time_gate_scalar_by_hand():
    p = cell_params(Wh=0.5, Qt=1.0)
    for dt in (0.0, 10.0):
        T = sig(sig(dt))
        expected = 0.5 * T * math.tanh(0.5)
        got = time_gated_gru_step(np.array([[1.0]]), np.array([[0.0]]), np.array([dt]), p)
        assert got[0, 0] == pytest.approx(expected, abs=1e-15)
    assert sig(10.0) == pytest.approx(0.99995, abs=1e-5)


def test_time_gate_rejects_negative_interval():
    with pytest.raises(ContractError):
        time_gated_gru_step(np.ones((1, 1)), np.zeros((1, 1)), np.array([-1.0]), cell_params())


# -- attention -------------------------------------------------------------------------

def att_params(H, **over):
    p = {"att_Wa": np.zeros((H, H)), "att_Ua": np.eye(H), "att_v": np.ones(H)}
    p.update(over)
    return p


def test_attend_identical_states_uniform():
    h = np.tile(np.array([0.3, -0.2, 0.9]), (1, 5, 1))
    alpha, g = attend(np.zeros((1, 3)), h, att_params(3))
    np.testing.assert_allclose(alpha, 0.2, atol=1e-15)
    np.testing.assert_allclose(g, h[:, 0], atol=1e-15)


def test_attend_single_state():
    h = np.array([[[0.1, 0.2]]])
    alpha, g = attend(np.zeros((1, 2)), h, att_params(2))
    np.testing.assert_array_equal(alpha, [[1.0]])
    np.testing.assert_array_equal(g, h[:, 0])


def test_attend_engineered_scores():
    a = 0.7
    h = np.array([[[a, 0.0], [0.0, 0.0]]])
    v = np.array([math.log(2) / math.tanh(a), 0.0])
    alpha, g = attend(np.zeros((1, 2)), h, att_params(2, att_v=v))
    np.testing.assert_allclose(alpha, [[2 / 3, 1 / 3]], atol=1e-15)
    np.testing.assert_allclose(g, (2 * h[:, 0] + h[:, 1]) / 3, atol=1e-15)


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_attention_weights_normalized(seed, L):
    rng = np.random.default_rng(seed)
    H = 5
    p = att_params(H, att_Wa=rng.normal(size=(H, H)) * 3, att_Ua=rng.normal(size=(H, H)) * 3,
                   att_v=rng.normal(size=H) * 10)
    alpha, _ = attend(rng.uniform(-1, 1, (4, H)), rng.uniform(-1, 1, (4, L, H)), p)
    assert np.all(alpha >= 0)
    np.testing.assert_allclose(alpha.sum(axis=-1), 1.0, rtol=0, atol=1e-12)


# -- full forward ---------------------------------------------------------------------

@pytest.mark.parametrize("model", ["attn3m", "attn", "no_mod1", "no_mod2", "no_mod3"])
def test_zero_weights_give_one_half(model):
    cfg = small(model)
    p, _ = forward(batch_for(cfg), zero_params(cfg), cfg)
    np.testing.assert_array_equal(p, 0.5)


def test_gru_baseline_zero_weights_uniform_over_vocabulary():
    cfg = small("gru")
    p, _ = forward(batch_for(cfg), zero_params(cfg), cfg)
    np.testing.assert_allclose(p, 1 / 5, atol=1e-15)


def reference_probability(batch, i, params, cfg):
    """Instance ``i`` evaluated with plain column-vector algebra, one step at a time."""
    P = {k: np.asarray(v, dtype=float) for k, v in params.items()}

    def rep(k, v):
        return v if cfg.brand_repr_mode == "features" else P["M_embed"][:, k] + v

    def cell(prefix, x, s, dt=None):
        z = sig(P[f"{prefix}_Wz"].T @ x + P[f"{prefix}_Uz"].T @ s)
        r = sig(P[f"{prefix}_Wr"].T @ x + P[f"{prefix}_Ur"].T @ s)
        c = np.tanh(P[f"{prefix}_Wh"].T @ x + P[f"{prefix}_Uh"].T @ (r * s))
        if dt is not None:
            c = c * sig(P[f"{prefix}_Wt"].T @ x + sig(P[f"{prefix}_Qt"][0] * dt))
        return z * c + (1 - z) * s

    H = cfg.hidden_size
    s = np.zeros(H)
    hs = []
    for m in range(batch.delta_t.shape[1]):
        r = rep(batch.brand_index[i, m], batch.brand_features[i, m])
        a = batch.action_onehot[i, m]
        if cfg.use_action_matrices:
            x = (P["M_purchase"] if a[0] == 1 else P["M_click"]) @ r
        else:
            x = np.concatenate([r, a])
        dt = batch.delta_t[i, m] / 86400.0
        if cfg.use_time_gate:
            s = cell("enc", x, s, dt)
        else:
            s = cell("enc", np.append(x, dt), s)
        hs.append(s)
    y0 = rep(batch.query_index[i], batch.query_features[i])
    if not cfg.use_attention:
        xq = np.zeros(cfg.input_size)
        xq[:len(y0)] = y0
        s = cell("enc", xq, s, 0.0 if cfg.use_time_gate else None)
        o = P["out_V"] @ s
        o = np.exp(o - o.max())
        return (o / o.sum())[batch.query_index[i]]
    s0 = np.zeros(H)
    e = np.array([P["att_v"] @ np.tanh(P["att_Wa"].T @ s0 + P["att_Ua"].T @ h) for h in hs])
    alpha = np.exp(e - e.max())
    alpha /= alpha.sum()
    g = sum(a * h for a, h in zip(alpha, hs))
    s1 = cell("dec", np.concatenate([y0, g]), s0)
    o = P["out_V"] @ s1
    return math.exp(o[1]) / (math.exp(o[0]) + math.exp(o[1]))


@pytest.mark.parametrize("cfg", ablation_configs(hidden_size=4, feature_dim=6, vocab_size=5),
                         ids=variant_name)
def test_forward_matches_straight_line_reference(cfg):
    batch = batch_for(cfg, n=4, seq_len=3, seed=17)
    params = init_params(cfg, 17)
    p, _ = forward(batch, params, cfg)
    for i in range(len(batch)):
        assert abs(p[i] - reference_probability(batch, i, params, cfg)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["attn3m", "attn", "no_mod3", "gru"]),
       st.floats(0.5, 2.0), st.sampled_from([1.0, 3600.0, 86400.0]))
def test_probabilities_strictly_inside_and_states_bounded(seed, model, scale, gap):
    cfg = small(model, hidden_size=5)
    rng = np.random.default_rng(seed)
    params = {k: v * scale for k, v in init_params(cfg, seed).items()}
    batch = random_batch(rng, 8, 10, 6, 5, mean_gap=gap)
    p, cache = forward(batch, params, cfg)
    assert np.all((p > 0) & (p < 1))
    assert np.all(np.abs(cache.values["hs"]) < 1)
    if cfg.use_attention:
        assert np.all(np.abs(cache.values["s1"]) < 1)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["attn", "no_mod3"]), st.floats(1.0, 50.0))
def test_states_never_exceed_one_under_saturation(seed, model, scale):
    # Far out, tanh and the gates round to exactly 1.0 in float64, so only the
    # closed bound can hold there.
    cfg = small(model, hidden_size=5)
    rng = np.random.default_rng(seed)
    params = {k: v * scale for k, v in init_params(cfg, seed).items()}
    batch = random_batch(rng, 8, 10, 6, 5, mean_gap=1e7)
    p, cache = forward(batch, params, cfg)
    assert np.all(np.abs(cache.values["hs"]) <= 1)
    assert np.all((p >= 0) & (p <= 1))


def test_mod3_off_interval_only_through_input():
    cfg = small("no_mod3")
    params = init_params(cfg, 2)
    batch = batch_for(cfg)
    params["enc_Wz"][-1] = params["enc_Wr"][-1] = params["enc_Wh"][-1] = 0.0
    p1, _ = forward(batch, params, cfg)
    batch.delta_t[:] = batch.delta_t * 37.0 + 5.0
    p2, _ = forward(batch, params, cfg)
    np.testing.assert_array_equal(p1, p2)


def test_forward_deterministic():
    cfg = small()
    batch = batch_for(cfg)
    a = forward(batch, init_params(cfg, 9), cfg)[0]
    b = forward(batch, init_params(cfg, 9), cfg)[0]
    assert a.tobytes() == b.tobytes()


def test_forward_rejects_wrong_width():
    cfg = small()
    batch = random_batch(np.random.default_rng(0), 2, 3, 7, 5)
    with pytest.raises(ContractError):
        forward(batch, init_params(cfg), cfg)


# -- backward ---------------------------------------------------------------------------

def test_stale_cache_rejected():
    cfg = small()
    model = Model(cfg, seed=1)
    batch = batch_for(cfg)
    _, cache = model.forward(batch)
    model.mark_updated()
    with pytest.raises(ContractError):
        model.backward(batch, cache)
    _, cache = forward(batch, model.params, cfg)
    with pytest.raises(ContractError):
        backward(batch_for(cfg), model.params, cfg, cache)


def test_untouched_embedding_columns_get_zero_gradient():
    cfg = small(brand_vocab_size=8)
    batch = batch_for(cfg, seed=3)
    batch.brand_index[:] = batch.brand_index % 3
    batch.query_index[:] = 4
    _, grads = Model(cfg, seed=0).loss_and_grad(batch)
    np.testing.assert_array_equal(grads["M_embed"][:, [3, 5, 6, 7]], 0.0)
    assert np.abs(grads["M_embed"][:, [0, 1, 2, 4]]).min(axis=0).max() > 0


def test_saturated_probability_stays_finite():
    cfg = small()
    params = init_params(cfg, 0)
    params["out_V"] = np.array([[-1e4] * 4, [1e4] * 4])
    batch = batch_for(cfg)
    batch.label[:] = 1
    p, cache = forward(batch, params, cfg)
    loss, grads = backward(batch, params, cfg, cache)
    assert np.isfinite(loss)
    assert all(np.all(np.isfinite(g)) for g in grads.values())


def test_loss_nonnegative_on_random_batches():
    cfg = small()
    model = Model(cfg, seed=4)
    for seed in range(5):
        loss, _ = model.loss_and_grad(batch_for(cfg, seed=seed))
        assert loss >= 0


@pytest.mark.parametrize("model,mods", [("attn", (1, 2, 3)), ("gru", ())])
def test_gradients_match_finite_differences(model, mods):
    cfg = make_config(model, mods, hidden_size=8, feature_dim=6, brand_vocab_size=5)
    assert gradient_check(cfg, seed=1).max_error <= 1e-4


def test_query_attention_and_learned_state_gradients():
    cfg = small(query_attention=True, learn_initial_state=True)
    assert gradient_check(cfg, seed=2).max_error <= 1e-4
