"""
The attention GRU and its hand-written gradients
================================================

Three switches change the basic attention GRU: (1) brand embeddings added to
the engineered features, (2) one matrix per action type instead of an action
one-hot, (3) a time gate on the encoder's candidate state.
"""

import numpy as np

from brandrank.gradcheck import ablation_configs, gradient_check, random_batch
from brandrank.models import Model, make_config, param_shapes

cfg = make_config("attn3m", hidden_size=16, brand_vocab_size=30)
for name, shape in param_shapes(cfg).items():
    print(f"{name:12s} {shape}")

# ## Forward pass on random inputs

batch = random_batch(np.random.default_rng(0), 5, 10, 56, 30)
model = Model(cfg, seed=0)
p, cache = model.forward(batch)
print("p =", np.round(p, 4))
print("attention weights of instance 0:", np.round(cache.values["alpha"][0], 3))

# ## Loss and gradient

loss, grads = model.backward(batch, cache, w=0.5)
print("loss", round(loss, 4), "| grad norm of M_embed", np.linalg.norm(grads["M_embed"]))

# ## Finite-difference check of every variant

for config in ablation_configs():
    res = gradient_check(config)
    print(f"{res.variant:8s} max relative error {res.max_error:.1e}")
