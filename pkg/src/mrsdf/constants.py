"""Shared geometric constants and default hyperparameters.

All shapes live in a fixed cube so grids, latent hierarchies and point
samples agree on coordinates without carrying a transform around.
"""

from __future__ import annotations

#: world-space bounding cube, axis-aligned: [BOX_MIN, BOX_MAX]^3
BOX_MIN: float = -0.64
BOX_MAX: float = 0.64
BOX_SIDE: float = BOX_MAX - BOX_MIN  # 1.28

#: signed distances are clamped to +/- this value for supervision and grids
SDF_TRUNCATION: float = 0.05

#: |sdf| threshold that defines the near-surface sampling band
NEAR_SURFACE_BAND: float = 0.04

#: Gaussian jitter applied along the normal when generating near-surface points
NEAR_SURFACE_JITTER: float = 0.02

#: tolerance for classifying a point as in front of / behind a depth map
VISIBILITY_TOL: float = 0.04

#: negative slope for all leaky ReLU activations
LEAKY_SLOPE: float = 0.02

#: default latent hierarchy at desk scale: (resolution, channels) per level,
#: coarsest first; level 0 is a single global code
DESK_LEVELS: tuple[tuple[int, int], ...] = ((1, 128), (2, 32), (4, 16), (8, 8))

#: default resolution of the encoder input grid
DESK_INPUT_RES: int = 32

#: decoder hidden widths (shared by all levels)
DECODER_WIDTHS: tuple[int, ...] = (128, 128, 64)

#: encoder trunk channels after each stride-2 stage
TRUNK_CHANNELS: tuple[int, ...] = (16, 32, 64)

#: spatial-cell dropout rate on latent levels >= 1 during training
DROPOUT_RATE: float = 0.5

#: Adam defaults
ADAM_BETA1: float = 0.9
ADAM_BETA2: float = 0.999
ADAM_EPS: float = 1e-8
TRAIN_LR: float = 1e-4
FIT_LR: float = 1e-2

#: latent-optimization defaults
FIT_STEPS: int = 1000
FIT_POINTS_PER_STEP: int = 2048
COMPLETION_VISIBLE_PER_STEP: int = 2048
COMPLETION_OCCLUDED_PER_STEP: int = 1024
CONSISTENCY_WEIGHT: float = 10.0
CONSISTENCY_SIGMA: float = 0.1

#: evaluation defaults
F_SCORE_TAU: float = 0.01
EVAL_SAMPLES: int = 10_000
CHAMFER_SCALE: float = 1e3
