"""Synthetic plate records, compression, datasets and curation.

The ``compress`` and ``curate`` functions live in the submodules of the same name.
"""
from .compress import band_bins, compress_full
from .config import PlateConfig, SymmetryBreakSpec, load_config
from .curate import CurationThresholds
from .dataset import (Dataset, DetectionSet, Example, balance_detection, baseline_subtract,
                      generate, import_arrays, load, localization_arrays, save, split, subtracted)
from .synth import synthesize

__all__ = [
    "PlateConfig", "SymmetryBreakSpec", "load_config", "synthesize", "band_bins",
    "compress_full", "Dataset", "DetectionSet", "Example", "generate", "baseline_subtract",
    "subtracted", "localization_arrays", "split", "balance_detection", "save", "load",
    "import_arrays", "CurationThresholds",
]
