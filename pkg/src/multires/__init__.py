"""Multi-resolution hierarchical masked-prediction speech encoder.

A desk-scale, fully testable implementation: waveform frontend, hourglass
transformer with learned rational resampling, K-means unit targets,
multi-resolution masked cross-entropy, a deterministic training loop, and an
analytic multiply-accumulate/parameter profiler.
"""

__version__ = "0.1.0"

from .config import ModelConfig, RateFactors, preset, reduced_fraction, validate

__all__ = ["ModelConfig", "RateFactors", "__version__", "preset",
           "reduced_fraction", "validate"]
