"""Action logs to fixed-length training instances.

Pipeline: :func:`parse_action_log` -> :func:`filter_sparse` ->
:func:`window_sequences` -> :func:`temporal_split` ->
:func:`add_negatives` -> :func:`encode_batch`.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (ContractError, DataError, EmptyDatasetError, ParseError, SamplingError,
                     VocabularyError)

log = logging.getLogger(__name__)

ACTION_TYPES = ("click", "purchase")
WINDOW = 11
HISTORY_LEN = WINDOW - 1
ACTION_HEADER = ["user_id", "brand_id", "action_type", "timestamp"]

# One-hot action codes: click=[0,1], purchase=[1,0].
ACTION_ONEHOT = {"click": (0.0, 1.0), "purchase": (1.0, 0.0)}


@dataclass(frozen=True)
class ActionTuple:
    user_id: str
    brand_id: str
    action_type: str
    timestamp: float

    def __post_init__(self):
        if self.action_type not in ACTION_TYPES:
            raise DataError(f"unknown action type {self.action_type!r}")


@dataclass(frozen=True)
class Step:
    brand_id: str
    action_type: str
    delta_t: float


@dataclass(frozen=True)
class TrainingInstance:
    """Ten history steps, the query brand/time and the binary label.

    ``user_id`` is carried along so that generator ground truth can be looked
    up; it is not a model input.
    """

    history: tuple[Step, ...]
    query_brand: str
    query_time: float
    label: int
    user_id: str = ""

    def __post_init__(self):
        if len(self.history) != HISTORY_LEN:
            raise ContractError(f"history must have {HISTORY_LEN} steps, got {len(self.history)}")
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {self.label}")
        if any(s.delta_t < 0 for s in self.history):
            raise ContractError("negative time interval in history")

    def timestamps(self) -> list[float]:
        """Absolute times of the history steps, rebuilt backwards from ``query_time``."""
        out = []
        t = self.query_time
        for step in reversed(self.history):
            t -= step.delta_t
            out.append(t)
        return out[::-1]


# -- parsing and filtering -------------------------------------------------------

def parse_action_log(path) -> dict[str, list[ActionTuple]]:
    """Read ``actions.csv`` into per-user, time-sorted action lists.

    Ties in timestamp keep file order. Users appear in order of first occurrence.
    """
    path = Path(path)
    by_user: dict[str, list[ActionTuple]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ACTION_HEADER:
            raise ParseError(f"{path}: expected header {','.join(ACTION_HEADER)}, got {header}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}: expected 4 fields, got {len(row)}", lineno)
            user, brand, action, ts = row
            if action not in ACTION_TYPES:
                raise ParseError(f"{path}: unknown action type {action!r}", lineno)
            try:
                t = float(ts)
            except ValueError:
                raise ParseError(f"{path}: bad timestamp {ts!r}", lineno) from None
            by_user.setdefault(user, []).append(ActionTuple(user, brand, action, t))
    for seq in by_user.values():
        seq.sort(key=lambda a: a.timestamp)
    return by_user


def write_action_log(path, actions: Mapping[str, Sequence[ActionTuple]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACTION_HEADER)
        for seq in actions.values():
            for a in seq:
                ts = a.timestamp
                w.writerow([a.user_id, a.brand_id, a.action_type,
                            str(int(ts)) if float(ts).is_integer() else repr(float(ts))])


def filter_sparse(actions: Mapping[str, Sequence[ActionTuple]], min_user_actions: int = 11,
                  min_brand_actions: int = 20) -> dict[str, list[ActionTuple]]:
    """Drop sparse users and brands repeatedly until nothing else changes."""
    if min_user_actions < 1 or min_brand_actions < 1:
        raise ContractError("filter thresholds must be >= 1")
    cur = {u: list(seq) for u, seq in actions.items()}
    while True:
        brand_counts = Counter(a.brand_id for seq in cur.values() for a in seq)
        weak = {b for b, c in brand_counts.items() if c < min_brand_actions}
        nxt = {}
        for u, seq in cur.items():
            kept = [a for a in seq if a.brand_id not in weak] if weak else seq
            if len(kept) >= min_user_actions:
                nxt[u] = kept
        if nxt.keys() == cur.keys() and all(len(nxt[u]) == len(cur[u]) for u in cur):
            break
        cur = nxt
    if not cur:
        raise EmptyDatasetError("every user was removed by the sparsity filter")
    return cur


# -- windows, negatives, split ----------------------------------------------------

def _instance_from_window(window: Sequence[ActionTuple], label: int = 1) -> TrainingInstance | None:
    hist, query = window[:-1], window[-1]
    times = [a.timestamp for a in hist] + [query.timestamp]
    if query.timestamp <= hist[-1].timestamp:
        return None
    steps = tuple(Step(a.brand_id, a.action_type, times[i + 1] - times[i])
                  for i, a in enumerate(hist))
    return TrainingInstance(steps, query.brand_id, query.timestamp, label, hist[0].user_id)


def window_sequences(actions: Mapping[str, Sequence[ActionTuple]], window: int = WINDOW,
                     sliding: bool = False) -> list[TrainingInstance]:
    """Cut each user's sequence into blocks of ``window`` actions as positives.

    Blocks are non-overlapping by default and a trailing remainder is
    dropped; ``sliding=True`` uses stride 1 instead. The last step's interval
    runs to the query time. Windows whose query time does not exceed the last
    history timestamp are skipped.
    """
    if window != WINDOW:
        raise ContractError(f"window length is fixed at {WINDOW}")
    stride = 1 if sliding else window
    out = []
    skipped = 0
    for seq in actions.values():
        for start in range(0, len(seq) - window + 1, stride):
            inst = _instance_from_window(seq[start:start + window])
            if inst is None:
                skipped += 1
            else:
                out.append(inst)
    if skipped:
        log.warning("skipped %d windows with a non-increasing query time", skipped)
    return out


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def negative_sample(positive: TrainingInstance, brand_universe: Sequence[str],
                    rng_seed=None) -> TrainingInstance:
    """Copy of ``positive`` with label 0 and a uniformly drawn different query brand.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``. The query time
    is kept unchanged.
    """
    others = [b for b in brand_universe if b != positive.query_brand]
    if not others:
        raise SamplingError("brand universe has no brand other than the positive query brand")
    pick = others[int(_rng(rng_seed).integers(len(others)))]
    return replace(positive, query_brand=pick, label=0)


def add_negatives(positives: Sequence[TrainingInstance], brand_universe: Sequence[str],
                  seed: int = 0, ratio: int = 1) -> list[TrainingInstance]:
    """Interleave each positive with ``ratio`` sampled negatives."""
    universe = sorted(set(brand_universe))
    rng = np.random.default_rng(seed)
    out = []
    for pos in positives:
        out.append(pos)
        for _ in range(ratio):
            out.append(negative_sample(pos, universe, rng))
    return out


def temporal_split(positives: Sequence[TrainingInstance]) -> tuple[list[TrainingInstance],
                                                                    list[TrainingInstance]]:
    """Last window of each user goes to test, earlier windows to train.

    Users with a single window contribute only to test.
    """
    last: dict[str, int] = {}
    for i, inst in enumerate(positives):
        last[inst.user_id] = i
    test_idx = set(last.values())
    train = [p for i, p in enumerate(positives) if i not in test_idx]
    test = [p for i, p in enumerate(positives) if i in test_idx]
    return train, test


def build_datasets(actions: Mapping[str, Sequence[ActionTuple]], seed: int = 0,
                   min_user_actions: int = 11, min_brand_actions: int = 20,
                   sliding: bool = False, neg_ratio: int = 1):
    """Filter, window, split and add negatives. Returns ``(train, test, brands)``."""
    kept = filter_sparse(actions, min_user_actions, min_brand_actions)
    brands = sorted({a.brand_id for seq in kept.values() for a in seq})
    positives = window_sequences(kept, sliding=sliding)
    if not positives:
        raise EmptyDatasetError("no user has a full window of actions")
    train_pos, test_pos = temporal_split(positives)
    seeds = np.random.SeedSequence(seed).spawn(2)
    train = add_negatives(train_pos, brands, np.random.default_rng(seeds[0]), neg_ratio)
    test = add_negatives(test_pos, brands, np.random.default_rng(seeds[1]), neg_ratio)
    return train, test, brands


# -- vocabulary and JSONL ------------------------------------------------------

@dataclass
class Vocabulary:
    """Dense indices for brand ids, in the given order."""

    brands: list[str]
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {b: i for i, b in enumerate(self.brands)}
        if len(self.index) != len(self.brands):
            raise DataError("duplicate brand ids in vocabulary")

    def __len__(self) -> int:
        return len(self.brands)

    def __contains__(self, brand) -> bool:
        return brand in self.index

    def lookup(self, brand: str) -> int:
        try:
            return self.index[brand]
        except KeyError:
            raise VocabularyError(f"brand {brand!r} is not in the vocabulary") from None

    @property
    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.brands).encode("utf-8")).hexdigest()[:16]

    def save(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["brand_id", "index"])
            for i, b in enumerate(self.brands):
                w.writerow([b, i])

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["brand_id", "index"]:
                raise ParseError(f"{path}: expected header brand_id,index", 1)
            rows = [(int(i), b) for b, i in reader]
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise DataError(f"{path}: indices must be 0..N-1")
        return cls([b for _, b in rows])


def instance_to_json(inst: TrainingInstance) -> dict:
    return {
        "history": [[s.brand_id, s.action_type, s.delta_t] for s in inst.history],
        "query_brand": inst.query_brand,
        "query_time": inst.query_time,
        "label": inst.label,
        "user_id": inst.user_id,
    }


def instance_from_json(obj: Mapping) -> TrainingInstance:
    try:
        steps = tuple(Step(str(b), str(a), float(dt)) for b, a, dt in obj["history"])
        for s in steps:
            if s.action_type not in ACTION_TYPES:
                raise DataError(f"unknown action type {s.action_type!r}")
        return TrainingInstance(steps, str(obj["query_brand"]), float(obj["query_time"]),
                                int(obj["label"]), str(obj.get("user_id", "")))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed instance: {exc}") from None


def write_jsonl(path, instances: Iterable[TrainingInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_json(inst), separators=(",", ":")) + "\n")


def read_jsonl(path) -> list[TrainingInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}: {exc.msg}", lineno) from None
            try:
                out.append(instance_from_json(obj))
            except DataError as exc:
                raise ParseError(f"{path}: {exc}", lineno) from None
    return out


# -- numeric encoding -------------------------------------------------------------

REPR_MODES = ("features", "one_hot", "combined")


@dataclass
class EncodedInstance:
    """Numeric inputs for one instance.

    ``brand_index`` is -1 where no vocabulary is available (features mode only).
    """

    brand_index: np.ndarray      # (L,) int
    brand_features: np.ndarray   # (L, F)
    action_onehot: np.ndarray    # (L, 2)
    delta_t: np.ndarray          # (L,) seconds
    query_index: int
    query_features: np.ndarray   # (F,)
    label: int


@dataclass
class Batch:
    """A stack of encoded instances, leading axis = instance."""

    brand_index: np.ndarray      # (B, L)
    brand_features: np.ndarray   # (B, L, F)
    action_onehot: np.ndarray    # (B, L, 2)
    delta_t: np.ndarray          # (B, L)
    query_index: np.ndarray      # (B,)
    query_features: np.ndarray   # (B, F)
    label: np.ndarray            # (B,)

    def __len__(self) -> int:
        return len(self.label)

    def take(self, idx) -> "Batch":
        return Batch(*(getattr(self, f)[idx] for f in _BATCH_FIELDS))


_BATCH_FIELDS = ("brand_index", "brand_features", "action_onehot", "delta_t",
                 "query_index", "query_features", "label")


def _brand_inputs(brand, features, vocab, mode, feature_dim):
    if mode in ("features", "combined"):
        if brand not in features:
            raise DataError(f"brand {brand!r} has no feature vector")
        feat = np.asarray(features[brand], dtype=np.float64)
        if feat.shape != (feature_dim,):
            raise ContractError(f"feature vector for {brand!r} has shape {feat.shape}")
    else:
        feat = np.zeros(feature_dim)
    if vocab is not None:
        idx = vocab.lookup(brand) if mode != "features" else vocab.index.get(brand, -1)
    elif mode != "features":
        raise VocabularyError(f"{mode} mode needs a brand vocabulary")
    else:
        idx = -1
    return idx, feat


def encode_instance(instance: TrainingInstance, brand_features: Mapping[str, np.ndarray] | None,
                    mode: str = "combined", vocab: Vocabulary | None = None,
                    feature_dim: int = 56) -> EncodedInstance:
    """Numeric form of one instance.

    Per history step: brand index and features, action one-hot
    (click ``[0, 1]``, purchase ``[1, 0]``) and the interval in seconds. The
    query brand is encoded the same way without an action part.
    """
    if mode not in REPR_MODES:
        raise ContractError(f"unknown brand representation mode {mode!r}")
    features = brand_features or {}
    L = len(instance.history)
    idx = np.empty(L, dtype=np.int64)
    feats = np.empty((L, feature_dim))
    onehot = np.empty((L, 2))
    dts = np.empty(L)
    for m, step in enumerate(instance.history):
        idx[m], feats[m] = _brand_inputs(step.brand_id, features, vocab, mode, feature_dim)
        onehot[m] = ACTION_ONEHOT[step.action_type]
        dts[m] = step.delta_t
    q_idx, q_feat = _brand_inputs(instance.query_brand, features, vocab, mode, feature_dim)
    return EncodedInstance(idx, feats, onehot, dts, int(q_idx), q_feat, instance.label)


def stack(encoded: Sequence[EncodedInstance]) -> Batch:
    if not encoded:
        raise ContractError("cannot stack an empty list of instances")
    return Batch(
        np.stack([e.brand_index for e in encoded]),
        np.stack([e.brand_features for e in encoded]),
        np.stack([e.action_onehot for e in encoded]),
        np.stack([e.delta_t for e in encoded]),
        np.array([e.query_index for e in encoded], dtype=np.int64),
        np.stack([e.query_features for e in encoded]),
        np.array([e.label for e in encoded], dtype=np.int64),
    )


def encode_batch(instances: Sequence[TrainingInstance],
                 brand_features: Mapping[str, np.ndarray] | None, mode: str = "combined",
                 vocab: Vocabulary | None = None, feature_dim: int = 56) -> Batch:
    return stack([encode_instance(i, brand_features, mode, vocab, feature_dim) for i in instances])


def label_balance(instances: Iterable[TrainingInstance]) -> tuple[int, int]:
    """``(positives, negatives)`` counts."""
    c = defaultdict(int)
    for inst in instances:
        c[inst.label] += 1
    return c[1], c[0]
