"""GRU, Attention-GRU and Attention-GRU with the three brand-ranking modifications.

Everything is batched over instances with row-vector conventions: a layer
``y = x W`` stores ``W`` as ``(in, out)``. The exceptions are the matrices
that act on brand vectors from the left (``M_embed``, ``M_click``,
``M_purchase``) and the output weight ``out_V``, which keep their
``(out, in)`` layout.

The three modifications, each behind its own flag:

1. brand representation = learned embedding column + engineered features,
2. per-action-type linear maps instead of concatenating an action one-hot,
3. a time gate ``T = sigmoid(x W_t + sigmoid(dt * Q_t))`` multiplying the
   candidate state of the encoder GRU.

Gradients are derived by hand; :func:`backward` mirrors :func:`forward`
step by step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Iterable

import numpy as np

from .dataset import Batch, REPR_MODES
from .errors import ContractError, VocabularyError
from .nn import as_float, sigmoid, softmax, weighted_log_loss

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 256
    brand_repr_mode: str = "combined"
    use_attention: bool = True
    use_action_matrices: bool = True
    use_time_gate: bool = True
    brand_vocab_size: int = 0
    feature_dim: int = 56
    # Intervals are divided by this before entering the network; 1.0 keeps seconds.
    time_unit: float = SECONDS_PER_DAY
    learn_initial_state: bool = False
    query_attention: bool = False

    def __post_init__(self):
        if self.brand_repr_mode not in REPR_MODES:
            raise ContractError(f"unknown brand_repr_mode {self.brand_repr_mode!r}")
        if self.hidden_size < 1 or self.feature_dim < 1:
            raise ContractError("hidden_size and feature_dim must be positive")
        if self.time_unit <= 0:
            raise ContractError("time_unit must be positive")
        if self.uses_embedding and self.brand_vocab_size < 1:
            raise ContractError(f"{self.brand_repr_mode} mode needs brand_vocab_size >= 1")
        if not self.use_attention and self.brand_vocab_size < 1:
            raise ContractError("the GRU baseline scores over the brand vocabulary; "
                                "brand_vocab_size must be >= 1")

    @property
    def uses_embedding(self) -> bool:
        return self.brand_repr_mode in ("one_hot", "combined")

    @property
    def uses_features(self) -> bool:
        return self.brand_repr_mode in ("features", "combined")

    @property
    def input_size(self) -> int:
        """Width of the encoder input x_m."""
        d = self.feature_dim
        if not self.use_action_matrices:
            d += 2
        if not self.use_time_gate:
            d += 1
        return d

    @property
    def mods(self) -> tuple[int, ...]:
        out = []
        if self.brand_repr_mode == "combined":
            out.append(1)
        if self.use_action_matrices:
            out.append(2)
        if self.use_time_gate:
            out.append(3)
        return tuple(out)

    def to_dict(self) -> dict:
        return asdict(self)


VARIANTS = ("gru", "attn", "attn3m", "no_mod1", "no_mod2", "no_mod3")


def make_config(model: str = "attn3m", mods: Iterable[int] | None = None, **kw) -> ModelConfig:
    """Config for a named variant.

    ``model`` is ``gru`` (no attention), ``attn`` (attention, no
    modifications), ``attn3m`` (all three) or ``no_modN``. An explicit
    ``mods`` iterable overrides the modification set of ``model``.
    """
    if model not in VARIANTS:
        raise ContractError(f"unknown model {model!r}; choose from {', '.join(VARIANTS)}")
    if mods is None:
        mods = {"gru": (), "attn": (), "attn3m": (1, 2, 3), "no_mod1": (2, 3),
                "no_mod2": (1, 3), "no_mod3": (1, 2)}[model]
    mods = set(mods)
    if not mods <= {1, 2, 3}:
        raise ContractError(f"modifications must be among 1, 2, 3; got {sorted(mods)}")
    base = dict(brand_repr_mode="combined" if 1 in mods else "features",
                use_attention=model != "gru",
                use_action_matrices=2 in mods, use_time_gate=3 in mods)
    base.update(kw)
    return ModelConfig(**base)


def variant_name(config: ModelConfig) -> str:
    if not config.use_attention:
        return "gru" if not config.mods else "gru+" + "".join(map(str, config.mods))
    mods = config.mods
    return {(): "attn", (1, 2, 3): "attn3m", (2, 3): "no_mod1", (1, 3): "no_mod2",
            (1, 2): "no_mod3"}.get(mods, "attn+" + "".join(map(str, mods)))


# -- parameters -------------------------------------------------------------------

_GATES = ("z", "r", "h")


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    H, F, D, N = config.hidden_size, config.feature_dim, config.input_size, config.brand_vocab_size
    shapes: dict[str, tuple[int, ...]] = {}
    if config.uses_embedding:
        shapes["M_embed"] = (F, N)
    if config.use_action_matrices:
        shapes["M_click"] = (F, F)
        shapes["M_purchase"] = (F, F)
    for g in _GATES:
        shapes[f"enc_W{g}"] = (D, H)
        shapes[f"enc_U{g}"] = (H, H)
    if config.use_time_gate:
        shapes["enc_Wt"] = (D, H)
        shapes["enc_Qt"] = (1, H)
    if config.learn_initial_state:
        shapes["enc_s0"] = (H,)
    if config.use_attention:
        shapes["att_Wa"] = (H, H)
        shapes["att_Ua"] = (H, H)
        shapes["att_v"] = (H,)
        if config.query_attention:
            shapes["att_Ya"] = (F, H)
        for g in _GATES:
            shapes[f"dec_W{g}"] = (F + H, H)
            shapes[f"dec_U{g}"] = (H, H)
        if config.learn_initial_state:
            shapes["dec_s0"] = (H,)
        shapes["out_V"] = (2, H)
    else:
        shapes["out_V"] = (N, H)
    return shapes


def init_params(config: ModelConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform weights; small embedding; near-identity action matrices; zero states."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name == "M_embed":
            p = rng.uniform(-0.01, 0.01, shape)
        elif name in ("M_click", "M_purchase"):
            p = np.eye(shape[0]) + rng.uniform(-0.01, 0.01, shape)
        elif name.endswith("_s0"):
            p = np.zeros(shape)
        else:
            fan_in, fan_out = (shape[0], 1) if len(shape) == 1 else shape
            a = np.sqrt(6.0 / (fan_in + fan_out))
            p = rng.uniform(-a, a, shape)
        params[name] = p.astype(np.float64)
    return params


def check_params(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    shapes = param_shapes(config)
    if set(shapes) != set(params):
        raise ContractError(f"parameter names do not match config: missing "
                            f"{sorted(set(shapes) - set(params))}, extra "
                            f"{sorted(set(params) - set(shapes))}")
    for name, shape in shapes.items():
        if params[name].shape != shape:
            raise ContractError(f"{name} has shape {params[name].shape}, expected {shape}")


# -- building blocks ----------------------------------------------------------

def brand_repr(index, features, params: dict, mode: str):
    """Brand representation: features, embedding column, or their sum.

    ``index`` and ``features`` may carry any leading batch shape.
    """
    if mode == "features":
        return as_float(features)
    emb = params["M_embed"]
    index = np.asarray(index)
    if np.any(index < 0) or np.any(index >= emb.shape[1]):
        raise VocabularyError("brand index outside the embedding vocabulary")
    col = emb.T[index]
    return col if mode == "one_hot" else col + features


def action_transform(r, action_onehot, params: dict, use_action_matrices: bool = True):
    """``M_click r`` or ``M_purchase r`` per step; without Mod 2, ``[r, onehot]``."""
    r = as_float(r)
    action_onehot = as_float(action_onehot).astype(r.dtype, copy=False)
    if not use_action_matrices:
        return np.concatenate([r, action_onehot], axis=-1)
    purchase = action_onehot[..., :1]
    return purchase * (r @ params["M_purchase"].T) + (1.0 - purchase) * (r @ params["M_click"].T)


def _gate_weights(params, prefix):
    return tuple(params[f"{prefix}_{k}"] for k in ("Wz", "Uz", "Wr", "Ur", "Wh", "Uh"))


def _cell_forward(x, s, params, prefix, dt=None):
    Wz, Uz, Wr, Ur, Wh, Uh = _gate_weights(params, prefix)
    z = sigmoid(x @ Wz + s @ Uz)
    r = sigmoid(x @ Wr + s @ Ur)
    rs = r * s
    c = np.tanh(x @ Wh + rs @ Uh)
    if dt is None:
        T = q = None
        cand = c
    else:
        q = sigmoid(dt[..., None] * params[f"{prefix}_Qt"])
        T = sigmoid(x @ params[f"{prefix}_Wt"] + q)
        cand = T * c
    s_new = z * cand + (1.0 - z) * s
    return s_new, (x, s, z, r, rs, c, T, q, dt)


def _cell_backward(ds, cache, params, grads, prefix):
    """Returns ``(dx, ds_prev)`` and accumulates weight gradients into ``grads``."""
    x, s, z, r, rs, c, T, q, dt = cache
    Wz, Uz, Wr, Ur, Wh, Uh = _gate_weights(params, prefix)
    if T is None:
        dz = ds * (c - s)
        dc = ds * z
    else:
        dz = ds * (T * c - s)
        dc = ds * z * T
        dat = ds * z * c * T * (1.0 - T)
        grads[f"{prefix}_Wt"] += x.T @ dat
        dq = dat * q * (1.0 - q)
        grads[f"{prefix}_Qt"] += dt @ dq
    ds_prev = ds * (1.0 - z)
    dah = dc * (1.0 - c * c)
    daz = dz * z * (1.0 - z)
    grads[f"{prefix}_Wh"] += x.T @ dah
    grads[f"{prefix}_Uh"] += rs.T @ dah
    drs = dah @ Uh.T
    dar = drs * s * r * (1.0 - r)
    ds_prev += drs * r
    grads[f"{prefix}_Wz"] += x.T @ daz
    grads[f"{prefix}_Uz"] += s.T @ daz
    grads[f"{prefix}_Wr"] += x.T @ dar
    grads[f"{prefix}_Ur"] += s.T @ dar
    dx = dah @ Wh.T + daz @ Wz.T + dar @ Wr.T
    ds_prev += daz @ Uz.T + dar @ Ur.T
    if T is not None:
        dx += dat @ params[f"{prefix}_Wt"].T
    return dx, ds_prev


def gru_step(x, s_prev, params: dict, prefix: str = "enc"):
    """Plain GRU update: ``s = z * tanh(x W_h + (r * s_prev) U_h) + (1 - z) * s_prev``."""
    return _cell_forward(as_float(x), as_float(s_prev), params, prefix)[0]


def time_gated_gru_step(x, s_prev, delta_t, params: dict, prefix: str = "enc"):
    """GRU update whose candidate is additionally scaled by the time gate.

    ``delta_t`` is used as given; callers convert units beforehand.
    """
    dt = as_float(delta_t)
    if np.any(dt < 0):
        raise ContractError("time interval must be nonnegative")
    return _cell_forward(as_float(x), as_float(s_prev), params, prefix, dt)[0]


def attend(s_prev, h, params: dict, y=None):
    """Additive attention over encoder states.

    ``e_j = v . tanh(s_prev W_a + h_j U_a [+ y Y_a])``; returns
    ``(alpha, glimpse)`` with ``alpha = softmax(e)`` and
    ``glimpse = sum_j alpha_j h_j``. ``h`` has shape ``(..., L, H)``.
    """
    alpha, g, _ = _attend_forward(as_float(s_prev), as_float(h), params, y)
    return alpha, g


def _attend_forward(s_prev, h, params, y=None):
    pre = (s_prev @ params["att_Wa"])[..., None, :] + h @ params["att_Ua"]
    if y is not None:
        pre = pre + (y @ params["att_Ya"])[..., None, :]
    th = np.tanh(pre)
    e = th @ params["att_v"]
    alpha = softmax(e, axis=-1)
    g = np.einsum("...l,...lh->...h", alpha, h)
    return alpha, g, (s_prev, h, y, th, alpha)


def _attend_backward(dg, cache, params, grads):
    s_prev, h, y, th, alpha = cache
    dalpha = np.einsum("blh,bh->bl", h, dg)
    dh = alpha[..., None] * dg[:, None, :]
    de = alpha * (dalpha - np.sum(alpha * dalpha, axis=-1, keepdims=True))
    grads["att_v"] += np.einsum("bla,bl->a", th, de)
    dpre = de[..., None] * params["att_v"] * (1.0 - th * th)
    grads["att_Ua"] += np.einsum("blh,bla->ha", h, dpre)
    dh += dpre @ params["att_Ua"].T
    dpre_sum = dpre.sum(axis=1)
    grads["att_Wa"] += s_prev.T @ dpre_sum
    ds_prev = dpre_sum @ params["att_Wa"].T
    dy = None
    if y is not None:
        grads["att_Ya"] += y.T @ dpre_sum
        dy = dpre_sum @ params["att_Ya"].T
    return dh, ds_prev, dy


# -- full model -------------------------------------------------------------------

@dataclass
class Cache:
    batch_id: int
    params_id: int
    version: int
    values: dict


def _check_batch(batch: Batch, config: ModelConfig):
    F = config.feature_dim
    if batch.brand_features.shape[-1] != F or batch.query_features.shape[-1] != F:
        raise ContractError(f"batch features have width {batch.brand_features.shape[-1]}, "
                            f"model expects {F}")
    if batch.action_onehot.shape[-1] != 2:
        raise ContractError("action one-hot must have width 2")
    if np.any(batch.delta_t < 0):
        raise ContractError("negative time interval in batch")
    if not config.use_attention and (np.any(batch.query_index < 0) or
                                     np.any(batch.query_index >= config.brand_vocab_size)):
        raise VocabularyError("GRU baseline needs every query brand in the vocabulary")


def _params_version(params) -> int:
    return getattr(params, "version", 0)


def forward(batch: Batch, params: dict, config: ModelConfig):
    """Probability of label 1 for every instance, plus the cache :func:`backward` needs."""
    _check_batch(batch, config)
    B, L = batch.delta_t.shape
    H = config.hidden_size
    mode = config.brand_repr_mode
    ftype = params["enc_Wz"].dtype
    v: dict = {}

    r = brand_repr(batch.brand_index, batch.brand_features, params, mode)
    xa = action_transform(r, batch.action_onehot, params, config.use_action_matrices)
    dt = batch.delta_t / config.time_unit
    x = xa if config.use_time_gate else np.concatenate([xa, dt[..., None]], axis=-1)
    v["r"] = r

    s = np.broadcast_to(params["enc_s0"], (B, H)).copy() if config.learn_initial_state \
        else np.zeros((B, H), dtype=ftype)
    hs = np.empty((B, L, H), dtype=ftype)
    cells = []
    for m in range(L):
        s, c = _cell_forward(x[:, m], s, params, "enc", dt[:, m] if config.use_time_gate else None)
        hs[:, m] = s
        cells.append(c)
    v["enc"] = cells
    v["hs"] = hs

    if config.use_attention:
        y0 = brand_repr(batch.query_index, batch.query_features, params, mode)
        s_prev = np.broadcast_to(params["dec_s0"], (B, H)).copy() if config.learn_initial_state \
            else np.zeros((B, H), dtype=ftype)
        alpha, g, att_cache = _attend_forward(s_prev, hs, params,
                                              y0 if config.query_attention else None)
        xd = np.concatenate([y0, g], axis=-1)
        s1, dec_cache = _cell_forward(xd, s_prev, params, "dec")
        logits = s1 @ params["out_V"].T
        probs = softmax(logits, axis=-1)
        p = probs[:, 1]
        v.update(y0=y0, alpha=alpha, att=att_cache, dec=dec_cache, s1=s1, probs=probs)
    else:
        # The query enters as one more step: its representation padded with a
        # zero action code and a zero interval.
        y0 = brand_repr(batch.query_index, batch.query_features, params, mode)
        xq = np.zeros((B, config.input_size), dtype=y0.dtype)
        xq[:, :config.feature_dim] = y0
        s, qcell = _cell_forward(xq, s, params, "enc",
                                 np.zeros(B, dtype=dt.dtype) if config.use_time_gate else None)
        logits = s @ params["out_V"].T
        probs = softmax(logits, axis=-1)
        p = probs[np.arange(B), batch.query_index]
        v.update(probs=probs, qcell=qcell, s_last=s)
    v["p"] = p
    return p, Cache(id(batch), id(params), _params_version(params), v)


def backward(batch: Batch, params: dict, config: ModelConfig, cache: Cache,
             w: float = 0.5, eps: float = 1e-7) -> tuple[float, dict[str, np.ndarray]]:
    """Mean weighted log loss over the batch and its exact gradient for every parameter."""
    if cache.batch_id != id(batch) or cache.params_id != id(params) \
            or cache.version != _params_version(params):
        raise ContractError("stale cache: backward needs the cache of a forward call on the "
                            "same batch and parameters")
    v = cache.values
    B, L = batch.delta_t.shape
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    losses, dp = weighted_log_loss(v["p"], batch.label, w, eps)
    dp = dp / B
    p = v["p"]
    probs = v["probs"]

    if config.use_attention:
        dz = dp * p * (1.0 - p)
        dlogits = np.stack([-dz, dz], axis=1)
        s1 = v["s1"]
        grads["out_V"] += dlogits.T @ s1
        ds1 = dlogits @ params["out_V"]
        dxd, ds_prev = _cell_backward(ds1, v["dec"], params, grads, "dec")
        F = config.feature_dim
        dy0 = dxd[:, :F]
        dhs, ds_att, dy_att = _attend_backward(dxd[:, F:], v["att"], params, grads)
        ds_prev += ds_att
        if dy_att is not None:
            dy0 = dy0 + dy_att
        if config.learn_initial_state:
            grads["dec_s0"] += ds_prev.sum(axis=0)
        ds = np.zeros((B, config.hidden_size))
    else:
        onehot = np.zeros_like(probs)
        onehot[np.arange(B), batch.query_index] = 1.0
        dlogits = (dp * p)[:, None] * (onehot - probs)
        grads["out_V"] += dlogits.T @ v["s_last"]
        dxq, ds = _cell_backward(dlogits @ params["out_V"], v["qcell"], params, grads, "enc")
        dhs = None
        dy0 = dxq[:, :config.feature_dim]

    dx = np.empty((B, L, config.input_size))
    for m in range(L - 1, -1, -1):
        if dhs is not None:
            ds = ds + dhs[:, m]
        dx[:, m], ds = _cell_backward(ds, v["enc"][m], params, grads, "enc")
    if config.learn_initial_state:
        grads["enc_s0"] += ds.sum(axis=0)

    dxa = dx if config.use_time_gate else dx[..., :-1]
    r = v["r"]
    F = config.feature_dim
    if config.use_action_matrices:
        purchase = batch.action_onehot[..., :1]
        dp_ = (purchase * dxa).reshape(-1, F)
        dc_ = ((1.0 - purchase) * dxa).reshape(-1, F)
        rf = r.reshape(-1, F)
        grads["M_purchase"] += dp_.T @ rf
        grads["M_click"] += dc_.T @ rf
        dr = (dp_ @ params["M_purchase"] + dc_ @ params["M_click"]).reshape(r.shape)
    else:
        dr = dxa[..., :F]
    if config.uses_embedding:
        gT = grads["M_embed"].T
        np.add.at(gT, batch.brand_index.reshape(-1), dr.reshape(-1, F))
        if dy0 is not None:
            np.add.at(gT, batch.query_index, dy0)
    return float(np.mean(losses)), grads


def batch_loss(batch: Batch, params: dict, config: ModelConfig, w: float = 0.5,
               eps: float = 1e-7) -> float:
    p, _ = forward(batch, params, config)
    return float(np.mean(weighted_log_loss(p, batch.label, w, eps)[0]))


class Model:
    """A config plus its parameters, with a version counter for cache validation."""

    def __init__(self, config: ModelConfig, params: dict | None = None, seed: int = 0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params
        check_params(self.params, config)
        self.version = 0

    def forward(self, batch: Batch):
        p, cache = forward(batch, self.params, self.config)
        cache.version = self.version
        return p, cache

    def backward(self, batch: Batch, cache: Cache, w: float = 0.5, eps: float = 1e-7):
        if cache.version != self.version:
            raise ContractError("stale cache: parameters were updated after the forward pass")
        cache = replace(cache, version=0)
        return backward(batch, self.params, self.config, cache, w, eps)

    def loss_and_grad(self, batch: Batch, w: float = 0.5, eps: float = 1e-7):
        p, cache = forward(batch, self.params, self.config)
        return backward(batch, self.params, self.config, cache, w, eps)

    def predict(self, batch: Batch, chunk: int = 1024) -> np.ndarray:
        out = np.empty(len(batch))
        for start in range(0, len(batch), chunk):
            idx = slice(start, start + chunk)
            out[idx] = forward(batch.take(idx), self.params, self.config)[0]
        return out

    def mark_updated(self) -> None:
        self.version += 1
