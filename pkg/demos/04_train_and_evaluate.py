"""
Training on planted data and reading the scores
===============================================

The synthetic generator knows each user's true choice probabilities, so a
trained model can be compared with the best achievable ranking.
"""

import numpy as np

from brandrank.evaluate import auc, format_table
from brandrank.pipeline import prepare_synthetic, train_variant
from brandrank.synth import SynthConfig, oracle_scores
from brandrank.train import TrainConfig

data = prepare_synthetic(SynthConfig(n_users=1500, seed=0))
print(len(data.train), "training and", len(data.test), "test instances")

# ## Two models, same budget

reports = []
for variant in ("gru", "attn3m"):
    ckpt, report = train_variant(data, variant, TrainConfig(epochs=6, lr=0.05), hidden_size=32)
    reports.append(report)
    print(variant, "losses:", [round(r["loss"], 3) for r in ckpt.trace])
print(format_table(reports))

# ## Ceiling

labels = np.array([i.label for i in data.test])
print("oracle AUC", round(auc(oracle_scores(data.truth, data.test), labels), 4))
