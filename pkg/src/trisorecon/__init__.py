"""Cone-beam CT reconstruction of photon-starved TRISO fuel particle scans.

FDK and qGGMRF/OGM model-based reconstruction with weight thresholding,
plus a phantom, a scan simulator and a seeded experiment harness.
"""

import numba

# The workqueue layer needs no external runtime and keeps results identical
# across thread counts given the fixed work partitions used by the kernels.
numba.config.THREADING_LAYER = "workqueue"

__version__ = "0.1.0"
