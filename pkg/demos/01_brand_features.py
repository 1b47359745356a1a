"""
Brand feature vectors from raw e-commerce events
================================================

Items are bucketed into seven price levels per category, and every
(brand, level) slice gets eight metrics. The result is one 56-wide vector
per brand.
"""

import numpy as np

from brandrank.features import (FEATURE_COLUMNS, EventRecord, ItemRecord, assign_price_level,
                                build_brand_feature_vectors, compute_price_levels)

# ## A tiny catalog
# Fourteen shoes from two brands, one category. Prices 1..14.

items = [ItemRecord(f"i{p}", "acme" if p % 2 else "zenith", "shoes", float(p))
         for p in range(1, 15)]
table = compute_price_levels(items, "shoes")
print("level boundaries:", table.boundaries)
print("price 6.5 ->", assign_price_level(ItemRecord("x", "acme", "shoes", 6.5), table))

# ## Events
# Impressions, clicks and one purchase on acme's cheapest item (level 1).

events = [EventRecord("u1", "i1", "impression", 0.0),
          EventRecord("u2", "i1", "impression", 5.0),
          EventRecord("u1", "i1", "click", 10.0),
          EventRecord("u1", "i1", "purchase", 70.0, amount=1.0),
          EventRecord("u3", "i14", "click", 90.0)]

feats = build_brand_feature_vectors(events, items)
raw = feats.raw[feats.index["acme"]]
for name, value in zip(FEATURE_COLUMNS, raw):
    if value:
        print(f"acme {name:10s} {value:g}")

# ## Normalized vectors
# log1p then per-column min-max; columns that never vary are zero.

print(feats.normalized.shape)
print(np.round(feats["zenith"][feats.normalized.any(axis=0)], 3))
