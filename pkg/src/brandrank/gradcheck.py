"""Finite-difference verification of the hand-derived model gradients."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import Batch
from .models import ModelConfig, backward, forward, init_params, make_config, variant_name
from .nn import finite_diff_check, weighted_log_loss

# Central differences of a float64 loss carry ~1 ulp of noise per evaluation,
# i.e. ~1e-11 absolute error on a gradient entry at step 1e-5. Under the 1e-8
# denominator floor that alone can exceed 1e-4 for entries below ~5e-8, so the
# oracle re-evaluates the forward pass in extended precision by default.
PRECISIONS = {"extended": np.longdouble, "float64": np.float64}


def random_batch(rng: np.random.Generator, n: int, seq_len: int, feature_dim: int,
                 vocab_size: int, mean_gap: float = 86400.0) -> Batch:
    """Random encoded instances: features in [0, 1), exponential gaps, mixed actions."""
    actions = rng.integers(0, 2, (n, seq_len))
    return Batch(
        brand_index=rng.integers(0, vocab_size, (n, seq_len)),
        brand_features=rng.uniform(0.0, 1.0, (n, seq_len, feature_dim)),
        action_onehot=np.eye(2)[actions],
        delta_t=rng.exponential(mean_gap, (n, seq_len)),
        query_index=rng.integers(0, vocab_size, n),
        query_features=rng.uniform(0.0, 1.0, (n, feature_dim)),
        label=rng.integers(0, 2, n),
    )


def _cast_batch(batch: Batch, dtype) -> Batch:
    return replace(batch,
                   brand_features=batch.brand_features.astype(dtype),
                   action_onehot=batch.action_onehot.astype(dtype),
                   delta_t=batch.delta_t.astype(dtype),
                   query_features=batch.query_features.astype(dtype))


@dataclass
class GradCheckResult:
    variant: str
    max_error: float
    per_param: dict[str, float]
    n_params: int

    @property
    def worst_param(self) -> str:
        return max(self.per_param, key=self.per_param.get)


def gradient_check(config: ModelConfig, n_instances: int = 5, seq_len: int = 4, seed: int = 0,
                   step: float = 1e-5, w: float = 0.5, precision: str = "extended",
                   ) -> GradCheckResult:
    """Max relative error of analytic vs central-difference gradients.

    Each of the ``n_instances`` seeded instances is checked on its own loss;
    the sweep over parameters is shared by evaluating all instance losses in
    one batched forward pass.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, seed)
    if config.learn_initial_state:
        for k in ("enc_s0", "dec_s0"):
            if k in params:
                params[k] += rng.normal(0.0, 0.3, params[k].shape)
    batch = random_batch(rng, n_instances, seq_len, config.feature_dim,
                         max(config.brand_vocab_size, 1))

    analytic = {k: np.empty((n_instances,) + p.shape) for k, p in params.items()}
    for i in range(n_instances):
        single = batch.take([i])
        _, cache = forward(single, params, config)
        _, grads = backward(single, params, config, cache, w=w)
        for k, g in grads.items():
            analytic[k][i] = g

    dtype = PRECISIONS[precision]
    hp = {k: v.astype(dtype) for k, v in params.items()}
    hb = _cast_batch(batch, dtype)

    def per_instance_loss():
        p, _ = forward(hb, hp, config)
        return weighted_log_loss(p, hb.label, w)[0]

    worst, per_param = finite_diff_check(per_instance_loss, hp, analytic, step, per_param=True)
    return GradCheckResult(variant_name(config), worst, per_param,
                           sum(p.size for p in params.values()))


def ablation_configs(hidden_size: int = 8, feature_dim: int = 6, vocab_size: int = 5,
                     **kw) -> list[ModelConfig]:
    """The GRU baseline plus all eight on/off combinations of the modifications."""
    common = dict(hidden_size=hidden_size, feature_dim=feature_dim,
                  brand_vocab_size=vocab_size, **kw)
    out = [make_config("gru", **common)]
    for mask in range(8):
        mods = [m for m in (1, 2, 3) if mask >> (m - 1) & 1]
        out.append(make_config("attn", mods, **common))
    return out
