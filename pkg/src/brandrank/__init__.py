"""Personalized brand ranking with an attention GRU over user action sequences.

Submodules:

- ``nn``: activations, weighted log loss, AdaGrad, gradient clipping, finite differences
- ``features``: the 56-wide brand feature vectors (7 price levels x 8 metrics)
- ``dataset``: action logs, windowing, negative sampling, encoding
- ``models``: GRU baseline, Attention-GRU and the three modifications, with exact gradients
- ``train``: the training loop and checkpoint files
- ``evaluate``: AUC, F1 and evaluation reports
- ``synth``: synthetic clickstreams with planted structure and their Bayes-oracle scores
- ``pipeline`` and ``cli``: end-to-end orchestration

The package root imports nothing heavy so that ``brandrank.cli`` can cap BLAS
threads before numpy loads.
"""

__version__ = "0.1.0"
