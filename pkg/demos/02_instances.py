"""
From action logs to training instances
======================================

Windows of eleven actions: ten form the history, the eleventh is the query.
Each positive gets one negative with a random other query brand.
"""

from brandrank.dataset import (Vocabulary, build_datasets, encode_batch, label_balance,
                               window_sequences)
from brandrank.features import build_brand_feature_vectors
from brandrank.synth import SynthConfig, generate

data = generate(SynthConfig(n_users=200, n_brands=20, seed=0))
user, seq = next(iter(data.actions.items()))
print(user, "has", len(seq), "actions; first three:")
for a in seq[:3]:
    print("  ", a.brand_id, a.action_type, int(a.timestamp))

# ## One window

inst = window_sequences({user: seq})[0]
for step in inst.history[:3]:
    print(f"  {step.brand_id} {step.action_type:8s} then {step.delta_t / 3600:.1f} h")
print("query:", inst.query_brand, "label", inst.label)

# ## Whole dataset
# Sparse users and brands are filtered, each user's last window is held out.

train, test, brands = build_datasets(data.actions, seed=0)
print("train", len(train), label_balance(train), "test", len(test))

feats = build_brand_feature_vectors(data.events, data.items, brands).as_dict()
batch = encode_batch(train, feats, "combined", Vocabulary(brands))
print("features", batch.brand_features.shape, "actions", batch.action_onehot.shape,
      "intervals", batch.delta_t.shape)
print("click encodes as", batch.action_onehot[0][batch.action_onehot[0, :, 1] == 1][0])
