"""Brand feature engineering over per-category price levels.

Each category's items are split into seven price levels at the septiles of
the sorted prices. For every (brand, level) pair eight e-commerce metrics are
aggregated from the event log; concatenating the levels gives a 56-wide raw
vector per brand, which is then squashed column-wise with ``log1p`` and
min-max scaled to [0, 1].
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, DegenerateCategoryError, ParseError

log = logging.getLogger(__name__)

N_LEVELS = 7
METRICS = ("ctr", "cvr", "gmv", "atip", "search", "click", "cart", "txn")
N_METRICS = len(METRICS)
FEATURE_DIM = N_LEVELS * N_METRICS
EVENT_TYPES = ("search", "impression", "click", "add_to_cart", "purchase")

FEATURE_COLUMNS = tuple(f"L{lv}_{m}" for lv in range(1, N_LEVELS + 1) for m in METRICS)


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    brand_id: str
    category_id: str
    price: float

    def __post_init__(self):
        if not self.price > 0:
            raise DataError(f"item {self.item_id}: price must be positive, got {self.price}")


@dataclass(frozen=True)
class EventRecord:
    user_id: str
    item_id: str
    event_type: str
    timestamp: float
    amount: float = 0.0

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise DataError(f"unknown event type {self.event_type!r}")
        if self.amount < 0:
            raise DataError("event amount must be nonnegative")
        if self.amount > 0 and self.event_type != "purchase":
            raise DataError(f"{self.event_type} event carries a nonzero amount")


@dataclass(frozen=True)
class PriceLevelTable:
    category_id: str
    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = self.boundaries
        if len(b) != N_LEVELS:
            raise DataError(f"expected {N_LEVELS} boundaries, got {len(b)}")
        if any(b[i] > b[i + 1] for i in range(len(b) - 1)):
            raise DataError(f"boundaries must be nondecreasing: {b}")


def compute_price_levels(items: Iterable[ItemRecord], category: str,
                         allow_small: bool = False) -> PriceLevelTable:
    """Septile boundaries of the prices of ``category``'s items.

    Boundary j (1-based) is the ``floor(j*n/7)``-th smallest price, so the last
    boundary is the maximum. With ``allow_small`` a category with fewer than
    seven items collapses to a single level (every boundary is the max price).
    """
    prices = sorted(it.price for it in items if it.category_id == category)
    n = len(prices)
    if n < N_LEVELS:
        if not allow_small or n == 0:
            raise DegenerateCategoryError(
                f"category {category!r} has {n} items; at least {N_LEVELS} are needed")
        return PriceLevelTable(category, (prices[-1],) * N_LEVELS)
    bounds = tuple(prices[(j * n) // N_LEVELS - 1] for j in range(1, N_LEVELS + 1))
    return PriceLevelTable(category, bounds)


def assign_price_level(item: ItemRecord, table: PriceLevelTable) -> int:
    """Smallest level j in 1..7 with ``price <= boundary_j``; prices above the table clamp to 7."""
    if item.category_id != table.category_id:
        raise DataError(f"item {item.item_id} is in category {item.category_id!r}, "
                        f"table is for {table.category_id!r}")
    if not item.price > 0:
        raise DataError(f"item {item.item_id}: nonpositive price")
    for j, bound in enumerate(table.boundaries, start=1):
        if item.price <= bound:
            return j
    return N_LEVELS


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def metrics_from_counts(counts: Mapping[str, float], gmv: float) -> np.ndarray:
    impressions = counts.get("impression", 0)
    clicks = counts.get("click", 0)
    purchases = counts.get("purchase", 0)
    return np.array([
        _ratio(clicks, impressions),
        _ratio(purchases, clicks),
        gmv,
        _ratio(gmv, purchases),
        counts.get("search", 0),
        clicks,
        counts.get("add_to_cart", 0),
        purchases,
    ], dtype=np.float64)


def aggregate_brand_metrics(events: Iterable[EventRecord], items: Iterable[ItemRecord],
                            brand: str, level: int,
                            tables: Mapping[str, PriceLevelTable] | None = None) -> np.ndarray:
    """The eight raw metrics for one (brand, price level) slice of the events.

    Order: CTR, CVR, GMV, ATIP, search, click, add-to-cart and transaction
    counts. Ratios with a zero denominator are 0.
    """
    items = list(items)
    if tables is None:
        cats = {it.category_id for it in items if it.brand_id == brand}
        tables = {c: compute_price_levels(items, c) for c in cats}
    in_slice = {it.item_id for it in items
                if it.brand_id == brand and assign_price_level(it, tables[it.category_id]) == level}
    counts: dict[str, float] = defaultdict(float)
    gmv = 0.0
    for ev in events:
        if ev.item_id in in_slice:
            counts[ev.event_type] += 1
            if ev.event_type == "purchase":
                gmv += ev.amount
    return metrics_from_counts(counts, gmv)


@dataclass
class BrandFeatures:
    """Raw and normalized 56-wide brand vectors plus the column scaling metadata.

    ``col_min``/``col_max`` are taken over ``log1p(raw)`` so that
    :meth:`denormalize` can invert the scaling exactly.
    """

    brand_ids: list[str]
    raw: np.ndarray
    normalized: np.ndarray
    col_min: np.ndarray
    col_max: np.ndarray

    def __getitem__(self, brand_id: str) -> np.ndarray:
        return self.normalized[self.index[brand_id]]

    def __contains__(self, brand_id) -> bool:
        return brand_id in self.index

    def __len__(self) -> int:
        return len(self.brand_ids)

    @property
    def index(self) -> dict[str, int]:
        try:
            return self._index
        except AttributeError:
            self._index = {b: i for i, b in enumerate(self.brand_ids)}
            return self._index

    def denormalize(self, values: np.ndarray) -> np.ndarray:
        span = self.col_max - self.col_min
        return np.expm1(np.asarray(values) * span + self.col_min)

    def as_dict(self) -> dict[str, np.ndarray]:
        return {b: self.normalized[i] for i, b in enumerate(self.brand_ids)}


def normalize_columns(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``log1p`` then per-column min-max to [0, 1]; constant columns map to 0."""
    logged = np.log1p(raw)
    lo = logged.min(axis=0) if len(raw) else np.zeros(raw.shape[1])
    hi = logged.max(axis=0) if len(raw) else np.zeros(raw.shape[1])
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    norm = np.where(span > 0, (logged - lo) / safe, 0.0)
    return np.clip(norm, 0.0, 1.0), lo, hi


def build_brand_feature_vectors(events: Iterable[EventRecord], items: Sequence[ItemRecord],
                                brands: Sequence[str] | None = None,
                                allow_small_categories: bool = False) -> BrandFeatures:
    """Aggregate metrics for every brand and level, then normalize per column.

    Brands without any item get an all-zero raw vector and a warning.
    """
    items = list(items)
    if brands is None:
        brands = sorted({it.brand_id for it in items})
    tables = {c: compute_price_levels(items, c, allow_small=allow_small_categories)
              for c in sorted({it.category_id for it in items})}
    slot = {it.item_id: (it.brand_id, assign_price_level(it, tables[it.category_id]))
            for it in items}

    counts: dict[tuple[str, int], dict[str, float]] = defaultdict(lambda: defaultdict(float))
    gmv: dict[tuple[str, int], float] = defaultdict(float)
    for ev in events:
        try:
            key = slot[ev.item_id]
        except KeyError:
            raise DataError(f"event references unknown item {ev.item_id!r}") from None
        counts[key][ev.event_type] += 1
        if ev.event_type == "purchase":
            gmv[key] += ev.amount

    has_items = {b for b, _ in slot.values()}
    raw = np.zeros((len(brands), FEATURE_DIM))
    missing = [b for b in brands if b not in has_items]
    if missing:
        shown = ", ".join(missing[:5]) + (", ..." if len(missing) > 5 else "")
        log.warning("%d brand(s) have no items and get an all-zero feature vector: %s",
                    len(missing), shown)
    for i, b in enumerate(brands):
        if b not in has_items:
            continue
        for lv in range(1, N_LEVELS + 1):
            key = (b, lv)
            if key in counts:
                start = (lv - 1) * N_METRICS
                raw[i, start:start + N_METRICS] = metrics_from_counts(counts[key], gmv[key])
    norm, lo, hi = normalize_columns(raw)
    return BrandFeatures(list(brands), raw, norm, lo, hi)


# -- CSV I/O -----------------------------------------------------------------

ITEM_HEADER = ["item_id", "brand_id", "category_id", "price"]
EVENT_HEADER = ["user_id", "item_id", "event_type", "timestamp", "amount"]


def _rows(path: Path, header: list[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first != header:
            raise ParseError(f"{path}: expected header {','.join(header)}, got {first}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} fields, got {len(row)}", lineno)
            yield lineno, row


def read_items(path) -> list[ItemRecord]:
    out = []
    for lineno, (item, brand, cat, price) in _rows(Path(path), ITEM_HEADER):
        try:
            out.append(ItemRecord(item, brand, cat, float(price)))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", lineno) from None
    return out


def read_events(path) -> list[EventRecord]:
    out = []
    for lineno, (user, item, etype, ts, amount) in _rows(Path(path), EVENT_HEADER):
        try:
            out.append(EventRecord(user, item, etype, float(ts), float(amount)))
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", lineno) from None
    return out


def write_items(path, items: Iterable[ItemRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ITEM_HEADER)
        for it in items:
            w.writerow([it.item_id, it.brand_id, it.category_id, repr(float(it.price))])


def write_events(path, events: Iterable[EventRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_HEADER)
        for ev in events:
            w.writerow([ev.user_id, ev.item_id, ev.event_type, _num(ev.timestamp), _num(ev.amount)])


def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_features(path, feats: BrandFeatures) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["brand_id", *FEATURE_COLUMNS])
        for b, row in zip(feats.brand_ids, feats.normalized):
            w.writerow([b, *(repr(float(v)) for v in row)])


def read_features(path) -> dict[str, np.ndarray]:
    """Load ``features.csv`` as ``{brand_id: 56-vector}``."""
    header = ["brand_id", *FEATURE_COLUMNS]
    out = {}
    for lineno, row in _rows(Path(path), header):
        try:
            vec = np.array([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}: {exc}", lineno) from None
        if not np.all(np.isfinite(vec)):
            raise ParseError(f"{path}: non-finite feature value", lineno)
        out[row[0]] = vec
    return out


def feature_matrix(features: Mapping[str, np.ndarray], brands: Sequence[str],
                   dim: int = FEATURE_DIM) -> np.ndarray:
    """Stack feature vectors in ``brands`` order; missing brands get zeros."""
    out = np.zeros((len(brands), dim))
    for i, b in enumerate(brands):
        v = features.get(b)
        if v is not None:
            out[i] = v
    return out
