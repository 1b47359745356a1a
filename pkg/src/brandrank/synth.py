"""Synthetic clickstreams with planted brand preferences.

Every user gets a latent affinity vector and a preferred price tier. The next
brand is drawn from a softmax over brands of

    static[u, k]                                   (affinity + price match + popularity)
    + decay_strength * sum_j 2**(-age_j / half_life) [b_j == k]
    + action_strength * sum_j [h_j == purchase] [b_j == k]
    + click_strength * sum_j [h_j == click] [b_j == k]

where j runs over the user's previous ``MEMORY`` actions. ``age_j`` is the
time from action j to now, or with ``decay_anchor="next"`` the pause between
action j and the action after it. The dynamic part only reaches back
``MEMORY`` = 10 actions, so a training instance's history holds everything
the generator conditioned on and :func:`oracle_scores` can recover the exact
choice probability of the query brand.

Two catalog knobs shape what the brand features can tell apart:
``lookalike_group`` makes groups of brands share category, price tier and
popularity, and ``cold_fraction`` withholds a share of brands from the
published items and events so that their feature vectors are all zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ActionTuple, TrainingInstance, write_action_log
from .errors import ContractError, DataError
from .features import EventRecord, ItemRecord, write_events, write_items
from .nn import sigmoid, softmax

MEMORY = 10
T0 = 1_600_000_000


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 5000
    n_brands: int = 100
    n_categories: int = 20
    items_per_brand: int = 8
    seq_len: tuple[int, int] = (22, 44)    # uniform on [lo, hi]
    affinity_dim: int = 8
    affinity_strength: float = 1.0
    half_life: float = 43200.0             # seconds
    decay_strength: float = 1.5
    action_strength: float = 1.0
    click_strength: float = 0.0
    decay_anchor: str = "now"              # "now": t - t_j; "next": t_{j+1} - t_j
    price_strength: float = 0.5
    popularity_skew: float = 0.3
    purchase_rate: float = 0.2
    lookalike_group: int = 1               # brands per group sharing category, tier, popularity
    cold_fraction: float = 0.0             # share of brands missing from items.csv and events.csv
    mean_gap: float = 86400.0              # seconds
    gap_sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        counts = (self.n_users, self.n_brands, self.n_categories, self.items_per_brand,
                  self.affinity_dim, self.lookalike_group)
        if min(counts) < 1:
            raise ContractError("all counts must be >= 1")
        if self.n_brands < 2:
            raise ContractError("need at least two brands")
        if not self.half_life > 0 or not self.mean_gap > 0:
            raise ContractError("half_life and mean_gap must be positive")
        lo, hi = self.seq_len
        if not 1 <= lo <= hi:
            raise ContractError(f"bad sequence length range {self.seq_len}")
        if self.decay_anchor not in ("now", "next"):
            raise ContractError(f"decay_anchor must be 'now' or 'next', got {self.decay_anchor!r}")
        if not 0 <= self.cold_fraction < 1:
            raise ContractError("cold_fraction must be in [0, 1)")
        if not 0 < self.purchase_rate < 1:
            raise ContractError("purchase_rate must be in (0, 1)")


PRESETS = {
    "default": {},
    # Each action's pull fades with the pause that follows it, so the
    # interval seen alongside every history step carries the signal.
    "time_decay": dict(decay_anchor="next", decay_strength=2.0, half_life=14400.0,
                       gap_sigma=1.5, action_strength=0.0),
    # Purchases pull the user back to a brand and clicks push away; the
    # static part is weak and brand features carry little.
    "action_signal": dict(action_strength=4.0, click_strength=-2.0, decay_strength=0.0,
                          affinity_strength=0.3, price_strength=0.0, popularity_skew=0.0),
    # Half of the brands never reach the item catalog or the event log, so
    # their feature vectors are all zero and only their identity separates them.
    "cold_brand": dict(n_brands=200, cold_fraction=0.5, affinity_strength=1.0,
                       decay_strength=2.0, action_strength=1.0),
}


def preset(name: str, seed: int = 0, **overrides) -> SynthConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ContractError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return SynthConfig(**{**base, **overrides, "seed": seed})


def brand_ids(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"b{k:0{width}d}" for k in range(n)]


def user_ids(n: int) -> list[str]:
    width = len(str(n - 1))
    return [f"u{u:0{width}d}" for u in range(n)]


@dataclass
class GroundTruth:
    """Static user-brand scores plus the dynamic-term parameters of one run."""

    user_ids: list[str]
    brand_ids: list[str]
    scores: np.ndarray                     # (users, brands)
    half_life: float
    decay_strength: float
    action_strength: float
    seed: int
    click_strength: float = 0.0
    decay_anchor: str = "now"
    action_times: dict[str, set] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._uidx = {u: i for i, u in enumerate(self.user_ids)}
        self._bidx = {b: i for i, b in enumerate(self.brand_ids)}

    def logits(self, user: str, history: Sequence[tuple[str, str, float]], t: float) -> np.ndarray:
        """Choice logits over brands for ``user`` acting at time ``t``.

        ``history`` holds ``(brand, action, timestamp)`` of the preceding actions;
        only the last ``MEMORY`` are used.
        """
        try:
            out = self.scores[self._uidx[user]].copy()
        except KeyError:
            raise DataError(f"unknown user {user!r}") from None
        recent = list(history)[-MEMORY:]
        for j, (brand, action, tj) in enumerate(recent):
            try:
                k = self._bidx[brand]
            except KeyError:
                raise DataError(f"unknown brand {brand!r}") from None
            until = recent[j + 1][2] if self.decay_anchor == "next" and j + 1 < len(recent) else t
            out[k] += self.decay_strength * 2.0 ** (-(until - tj) / self.half_life)
            if action == "purchase":
                out[k] += self.action_strength
            else:
                out[k] += self.click_strength
        return out

    def save(self, directory) -> None:
        directory = Path(directory)
        with open(directory / "truth.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["user_id", "brand_id", "score"])
            for i, u in enumerate(self.user_ids):
                for k, b in enumerate(self.brand_ids):
                    w.writerow([u, b, repr(float(self.scores[i, k]))])

    @classmethod
    def load(cls, directory) -> "GroundTruth":
        """Rebuild from ``truth.csv``, ``synth_config.json`` and ``actions.csv``."""
        directory = Path(directory)
        cfg = json.loads((directory / "synth_config.json").read_text(encoding="utf-8"))
        users: dict[str, int] = {}
        brands: dict[str, int] = {}
        rows = []
        with open(directory / "truth.csv", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            if next(reader, None) != ["user_id", "brand_id", "score"]:
                raise DataError("truth.csv: bad header")
            for u, b, s in reader:
                rows.append((users.setdefault(u, len(users)), brands.setdefault(b, len(brands)),
                             float(s)))
        scores = np.zeros((len(users), len(brands)))
        for i, k, s in rows:
            scores[i, k] = s
        times: dict[str, set] = {}
        with open(directory / "actions.csv", newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for u, _, _, ts in reader:
                times.setdefault(u, set()).add(float(ts))
        return cls(list(users), list(brands), scores, cfg["half_life"], cfg["decay_strength"],
                   cfg["action_strength"], cfg["seed"], cfg.get("click_strength", 0.0),
                   cfg.get("decay_anchor", "now"), times)


@dataclass
class SynthData:
    config: SynthConfig
    items: list[ItemRecord]
    events: list[EventRecord]
    actions: dict[str, list[ActionTuple]]
    truth: GroundTruth
    brand_tier: np.ndarray
    cold_brands: list[str] = field(default_factory=list)

    def write(self, directory) -> None:
        """Emit items.csv, events.csv, actions.csv, truth.csv and synth_config.json."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_items(directory / "items.csv", self.items)
        write_events(directory / "events.csv", self.events)
        write_action_log(directory / "actions.csv", self.actions)
        self.truth.save(directory)
        (directory / "synth_config.json").write_text(
            json.dumps(asdict(self.config), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _catalog(cfg: SynthConfig, rng: np.random.Generator):
    """Brand tiers, latent vectors and priced items."""
    N, C, g = cfg.n_brands, cfg.n_categories, cfg.lookalike_group
    bids = brand_ids(N)
    group = np.arange(N) // g
    tier = rng.uniform(0.0, 6.0, group[-1] + 1)[group]
    vecs = rng.normal(0.0, 1.0, (N, cfg.affinity_dim))
    cat_base = np.exp(rng.uniform(np.log(10.0), np.log(500.0), C))
    items = []
    item_brand = []
    width = len(str(N * cfg.items_per_brand - 1))
    for k in range(N):
        cat = group[k] % C
        for j in range(cfg.items_per_brand):
            price = cat_base[cat] * np.exp(0.35 * (tier[k] - 3.0) + rng.normal(0.0, 0.2))
            iid = f"i{k * cfg.items_per_brand + j:0{width}d}"
            items.append(ItemRecord(iid, bids[k], f"c{cat:02d}", round(float(price), 2)))
            item_brand.append(k)
    return bids, tier, vecs, items, np.array(item_brand)


def generate(config: SynthConfig) -> SynthData:
    """Deterministic synthetic dataset for ``config`` (see module docstring)."""
    cfg = config
    root = np.random.SeedSequence(cfg.seed)
    catalog_seq, user_seq = root.spawn(2)
    crng = np.random.default_rng(catalog_seq)
    bids, tier, bvecs, items, item_brand = _catalog(cfg, crng)
    N, M = cfg.n_brands, cfg.n_users
    uids = user_ids(M)

    n_groups = (N - 1) // cfg.lookalike_group + 1
    pop = -cfg.popularity_skew * np.log1p(np.arange(n_groups))
    pop = pop[crng.permutation(n_groups)][np.arange(N) // cfg.lookalike_group]
    uvecs = crng.normal(0.0, 1.0 / np.sqrt(cfg.affinity_dim), (M, cfg.affinity_dim))
    utier = crng.uniform(0.0, 6.0, M)
    cold = np.zeros(N, dtype=bool)
    if cfg.cold_fraction > 0:
        cold[crng.permutation(N)[:int(round(cfg.cold_fraction * N))]] = True
    affinity = uvecs @ bvecs.T
    price_match = -np.abs(tier[None, :] - utier[:, None]) / 2.0
    scores = cfg.affinity_strength * affinity + cfg.price_strength * price_match + pop[None, :]

    items_of = [np.flatnonzero(item_brand == k) for k in range(N)]
    item_tier = np.array([tier[item_brand[i]] for i in range(len(items))])
    purchase_bias = np.log(cfg.purchase_rate / (1.0 - cfg.purchase_rate))
    gap_mu = np.log(cfg.mean_gap) - cfg.gap_sigma ** 2 / 2.0
    truth = GroundTruth(uids, bids, scores, cfg.half_life, cfg.decay_strength,
                        cfg.action_strength, cfg.seed, cfg.click_strength,
                        cfg.decay_anchor)

    actions: dict[str, list[ActionTuple]] = {}
    events: list[EventRecord] = []
    lo, hi = cfg.seq_len
    for u, (uid, useq) in enumerate(zip(uids, user_seq.spawn(M))):
        rng = np.random.default_rng(useq)
        length = int(rng.integers(lo, hi + 1))
        t = T0 + int(rng.integers(0, 30 * 86400))
        seq: list[ActionTuple] = []
        for _ in range(length):
            if seq:
                t += max(1, int(round(rng.lognormal(gap_mu, cfg.gap_sigma))))
            hist = [(a.brand_id, a.action_type, a.timestamp) for a in seq[-MEMORY:]]
            probs = softmax(truth.logits(uid, hist, t))
            k = int(rng.choice(N, p=probs))
            p_buy = sigmoid(purchase_bias + cfg.affinity_strength * 0.5 * affinity[u, k])
            action = "purchase" if rng.random() < p_buy else "click"
            seq.append(ActionTuple(uid, bids[k], action, float(t)))
            events.extend(_events_for(uid, k, action, t, rng, items, items_of, item_tier,
                                      utier[u], cfg))
        actions[uid] = seq
        truth.action_times[uid] = {a.timestamp for a in seq}
    if cold.any():
        # Cold brands are chosen by users like any other brand, but neither
        # their items nor the raw events on them reach the published logs.
        items = [it for it, k in zip(items, item_brand) if not cold[k]]
        shown = {it.item_id for it in items}
        events = [ev for ev in events if ev.item_id in shown]
    return SynthData(cfg, items, events, actions, truth, tier,
                     [b for b, c in zip(bids, cold) if c])


def _events_for(uid, k, action, t, rng, items, items_of, item_tier, user_tier, cfg):
    """Raw events around one action: optional search, impressions, click, cart, purchase."""
    own = items_of[k]
    w = np.exp(-cfg.price_strength * np.abs(item_tier[own] - user_tier))
    item = items[int(own[rng.choice(len(own), p=w / w.sum())])]
    out = []
    if rng.random() < 0.3:
        out.append(EventRecord(uid, item.item_id, "search", float(t - 90)))
    for j in rng.integers(0, len(items), 2):
        out.append(EventRecord(uid, items[int(j)].item_id, "impression", float(t - 60)))
    out.append(EventRecord(uid, item.item_id, "impression", float(t - 30)))
    out.append(EventRecord(uid, item.item_id, "click", float(t)))
    if action == "purchase":
        out.append(EventRecord(uid, item.item_id, "add_to_cart", float(t + 60)))
        out.append(EventRecord(uid, item.item_id, "purchase", float(t + 120), item.price))
    elif rng.random() < 0.1:
        out.append(EventRecord(uid, item.item_id, "add_to_cart", float(t + 60)))
    return out


def oracle_scores(truth: GroundTruth, instances: Sequence[TrainingInstance]) -> np.ndarray:
    """The generator's probability that each instance's user picks its query brand next.

    Raises :class:`DataError` for users or brands the run does not know, and
    for instances whose timestamps are not actions of that user in this run.
    """
    out = np.empty(len(instances))
    for i, inst in enumerate(instances):
        times = inst.timestamps()
        known = truth.action_times.get(inst.user_id)
        if known is None:
            raise DataError(f"unknown user {inst.user_id!r}")
        if inst.label == 1:
            times = times + [inst.query_time]
        if not all(t in known for t in times):
            raise DataError(f"instance for {inst.user_id} does not come from this run "
                            f"(seed {truth.seed})")
        hist = [(s.brand_id, s.action_type, t) for s, t in zip(inst.history, times)]
        logits = truth.logits(inst.user_id, hist, inst.query_time)
        try:
            k = truth._bidx[inst.query_brand]
        except KeyError:
            raise DataError(f"unknown brand {inst.query_brand!r}") from None
        out[i] = softmax(logits)[k]
    return out


def with_seed(config: SynthConfig, seed: int) -> SynthConfig:
    return replace(config, seed=seed)
