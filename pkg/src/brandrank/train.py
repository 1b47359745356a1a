"""Weighted log loss, the AdaGrad training loop and checkpoint files."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Batch
from .errors import CheckpointError, ContractError, NumericDomainError
from .evaluate import auc
from .models import Model, ModelConfig, backward, forward, init_params
from .nn import AdaGrad, clip_global_norm, weighted_log_loss

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CLAMP_EPS = 1e-7


def instance_loss(p: float, label: int, w: float = 0.5, eps: float = CLAMP_EPS) -> float:
    """``-log p`` for a positive, ``-w log(1 - p)`` for a negative; ``p`` clamped to [eps, 1-eps]."""
    return float(weighted_log_loss(np.array([p]), np.array([label]), w, eps)[0][0])


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.01
    w: float = 0.5
    clamp_eps: float = CLAMP_EPS
    clip_norm: float = 5.0
    seed: int = 0
    adagrad_eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if not 0 < self.w <= 1:
            raise ContractError(f"negative weight w must be in (0, 1], got {self.w}")
        if self.epochs < 0:
            raise ContractError("epochs must be >= 0")
        if not self.lr > 0:
            raise ContractError("learning rate must be positive")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    accumulators: dict[str, np.ndarray]
    vocab_hash: str = ""
    trace: list[dict] = field(default_factory=list)
    version: int = CHECKPOINT_VERSION

    def model(self) -> Model:
        return Model(self.model_config, self.params)


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """The instance permutation used in ``epoch`` (0-based)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(data: Batch, config: TrainConfig, model_config: ModelConfig, vocab_hash: str = "",
          eval_data: Batch | None = None, callback=None) -> Checkpoint:
    """Mini-batch AdaGrad on the mean weighted log loss.

    Records per epoch the mean training loss (over the losses seen during the
    epoch, i.e. before each batch's update), the training AUC of those
    predictions, and the AUC on ``eval_data`` when given.
    """
    n = len(data)
    if n == 0:
        raise ContractError("training set is empty")
    params = init_params(model_config, config.seed)
    opt = AdaGrad(params, config.lr, config.adagrad_eps)
    trace = []
    for epoch in range(config.epochs):
        order = epoch_order(n, config.seed, epoch)
        losses = np.empty(n)
        preds = np.empty(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = data.take(idx)
            p, cache = forward(batch, params, model_config)
            if not np.all(np.isfinite(p)):
                bad = int(idx[np.flatnonzero(~np.isfinite(p))[0]])
                raise NumericDomainError(f"non-finite prediction for training instance {bad} "
                                         f"in epoch {epoch}")
            loss_vec = weighted_log_loss(p, batch.label, config.w, config.clamp_eps)[0]
            _, grads = backward(batch, params, model_config, cache, config.w, config.clamp_eps)
            clip_global_norm(grads, config.clip_norm)
            opt.step(params, grads)
            losses[start:start + len(idx)] = loss_vec
            preds[start:start + len(idx)] = p
        labels = data.label[order]
        row = {"epoch": epoch + 1, "loss": float(np.mean(losses))}
        if 0 < labels.sum() < n:
            row["train_auc"] = auc(preds, labels)
        if eval_data is not None:
            p_eval = Model(model_config, params).predict(eval_data)
            row["eval_auc"] = auc(p_eval, eval_data.label)
        trace.append(row)
        log.info("epoch %d: %s", epoch + 1, row)
        if callback is not None:
            callback(row)
    return Checkpoint(model_config, config, params, opt.state.accumulators, vocab_hash, trace)


def mean_loss(model: Model, data: Batch, w: float = 0.5, eps: float = CLAMP_EPS) -> float:
    p = model.predict(data)
    return float(np.mean(weighted_log_loss(p, data.label, w, eps)[0]))


# -- checkpoint files ---------------------------------------------------------

def _fmt(x: float) -> str:
    if not math.isfinite(x):
        raise NumericDomainError("cannot write a non-finite value to a checkpoint")
    return format(x, ".17g")


def _record(name: str, arr: np.ndarray) -> str:
    values = ",".join(_fmt(float(v)) for v in arr.ravel())
    return (f'{{"name": {json.dumps(name)}, "shape": {json.dumps(list(arr.shape))}, '
            f'"values": [{values}]}}')


def _digest(params: dict[str, np.ndarray], accumulators: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for group in (params, accumulators):
        for name in sorted(group):
            h.update(name.encode())
            h.update(",".join(_fmt(float(v)) for v in group[name].ravel()).encode())
    return h.hexdigest()


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write a UTF-8 JSON document; array values use 17 significant digits."""
    header = {
        "format": "brandrank-checkpoint",
        "version": ckpt.version,
        "model_config": ckpt.model_config.to_dict(),
        "train_config": asdict(ckpt.train_config),
        "vocab_hash": ckpt.vocab_hash,
        "trace": ckpt.trace,
        "checksum": _digest(ckpt.params, ckpt.accumulators),
    }
    lines = ["{"]
    for k, v in header.items():
        lines.append(f"  {json.dumps(k)}: {json.dumps(v, sort_keys=True)},")
    lines.append('  "params": [')
    lines.append(",\n".join("    " + _record(k, ckpt.params[k]) for k in ckpt.params))
    lines.append("  ],")
    lines.append('  "accumulators": [')
    lines.append(",\n".join("    " + _record(k, ckpt.accumulators[k])
                            for k in ckpt.accumulators))
    lines.append("  ]")
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _arrays(records) -> dict[str, np.ndarray]:
    out = {}
    for rec in records:
        arr = np.array(rec["values"], dtype=np.float64)
        shape = tuple(rec["shape"])
        if arr.size != int(np.prod(shape, dtype=int)):
            raise CheckpointError(f"{rec['name']}: {arr.size} values for shape {shape}")
        out[rec["name"]] = arr.reshape(shape)
    return out


def load_checkpoint(path, expected_vocab_hash: str | None = None) -> Checkpoint:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises :class:`CheckpointError` on a version mismatch or a truncated or
    corrupted file; nothing is returned in either case. A vocabulary hash
    that differs from ``expected_vocab_hash`` only triggers a warning.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: truncated or malformed checkpoint ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("format") != "brandrank-checkpoint":
        raise CheckpointError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {doc.get('version')!r} is "
                              f"incompatible with reader version {CHECKPOINT_VERSION}")
    try:
        params = _arrays(doc["params"])
        accs = _arrays(doc["accumulators"])
        model_config = ModelConfig(**doc["model_config"])
        train_config = TrainConfig(**doc["train_config"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: missing or malformed field ({exc})") from None
    if _digest(params, accs) != doc.get("checksum"):
        raise CheckpointError(f"{path}: checksum mismatch; file is corrupted")
    ckpt = Checkpoint(model_config, train_config, params, accs, doc.get("vocab_hash", ""),
                      doc.get("trace", []), doc["version"])
    Model(model_config, params)  # shape validation
    if expected_vocab_hash is not None and expected_vocab_hash != ckpt.vocab_hash:
        warnings.warn(f"checkpoint vocabulary hash {ckpt.vocab_hash} differs from data "
                      f"vocabulary hash {expected_vocab_hash}", stacklevel=2)
    return ckpt


def initial_checkpoint(model_config: ModelConfig, config: TrainConfig,
                       vocab_hash: str = "") -> Checkpoint:
    params = init_params(model_config, config.seed)
    return Checkpoint(model_config, config, params,
                      {k: np.zeros_like(v) for k, v in params.items()}, vocab_hash)
