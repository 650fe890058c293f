"""Syllabion: discovery of syllable-like units from speech features.

The pipeline: speaker-perturbed BYOL fine-tuning of a transformer encoder,
self-similarity min-cut segmentation, two-step clustering, and a metric
suite for boundaries and unit quality.
"""

__version__ = "0.1.0"

from . import (  # noqa: E402,F401
    clusterer,
    config,
    dsp,
    evaluator,
    featurize,
    io,
    neural,
    segmenter,
    trainer,
)
