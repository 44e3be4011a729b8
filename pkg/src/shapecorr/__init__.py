"""shapecorr: zero-shot 3D shape correspondence toolkit.

Pipeline stages: zero-shot classification, semantic region generation and
mapping, multi-view 3D segmentation, coarse region correspondence, and
spectral densification into dense point-to-point maps — plus the metric suite
and oracle backends (HTTP sidecar, record/replay fixtures, synthetic ground
truth) that make the whole thing testable offline.
"""

__version__ = "0.1.0"
