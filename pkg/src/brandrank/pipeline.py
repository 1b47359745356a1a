"""End-to-end helpers: synthetic data -> features -> instances -> trained variants."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .dataset import Batch, TrainingInstance, Vocabulary, build_datasets, encode_batch
from .evaluate import EvalReport, evaluate
from .features import BrandFeatures, build_brand_feature_vectors
from .models import Model, ModelConfig, make_config
from .synth import GroundTruth, SynthConfig, generate
from .train import Checkpoint, TrainConfig, train

COMPARISON_VARIANTS = ("attn3m", "no_mod1", "no_mod2", "no_mod3", "gru", "attn")
ABLATION_VARIANTS = ("attn3m", "no_mod1", "no_mod2", "no_mod3")


@dataclass
class PreparedData:
    features: dict[str, np.ndarray]
    vocab: Vocabulary
    train: list[TrainingInstance]
    test: list[TrainingInstance]
    truth: GroundTruth | None = None

    def encode(self, config: ModelConfig) -> tuple[Batch, Batch]:
        mode = config.brand_repr_mode
        return (encode_batch(self.train, self.features, mode, self.vocab, config.feature_dim),
                encode_batch(self.test, self.features, mode, self.vocab, config.feature_dim))


def prepare(actions, features: dict[str, np.ndarray], seed: int = 0,
            min_user_actions: int = 11, min_brand_actions: int = 20,
            sliding: bool = False, truth: GroundTruth | None = None) -> PreparedData:
    train_set, test_set, brands = build_datasets(actions, seed, min_user_actions,
                                                 min_brand_actions, sliding)
    return PreparedData(features, Vocabulary(brands), train_set, test_set, truth)


def prepare_synthetic(config: SynthConfig, **kw) -> PreparedData:
    data = generate(config)
    feats: BrandFeatures = build_brand_feature_vectors(data.events, data.items,
                                                       data.truth.brand_ids)
    return prepare(data.actions, feats.as_dict(), seed=config.seed, truth=data.truth, **kw)


def train_variant(data: PreparedData, variant: str, train_config: TrainConfig,
                  hidden_size: int = 256, **model_kw) -> tuple[Checkpoint, EvalReport]:
    config = make_config(variant, hidden_size=hidden_size,
                         brand_vocab_size=len(data.vocab), **model_kw)
    train_batch, test_batch = data.encode(config)
    ckpt = train(train_batch, train_config, config, data.vocab.hash)
    report = evaluate(Model(config, ckpt.params), test_batch, variant)
    return ckpt, report


def compare(data: PreparedData, variants: Iterable[str], train_config: TrainConfig,
            hidden_size: int = 256, **model_kw) -> list[EvalReport]:
    return [train_variant(data, v, train_config, hidden_size, **model_kw)[1] for v in variants]


def seeded(train_config: TrainConfig, seed: int) -> TrainConfig:
    return replace(train_config, seed=seed)


def mean_auc(reports: Sequence[EvalReport]) -> float:
    return float(np.mean([r.auc for r in reports]))
