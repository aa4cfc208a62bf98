"""chromaprop — temporally consistent video colorization.

A grayscale video is split into intervals; the first and last frame of
each interval (the anchors) are colorized by a single-image backbone,
and every frame in between gets its color by warping the anchors' deep
features along optical flow from both temporal directions and fusing
them with a small learned module. Only the fusion module trains, using
a warping-consistency loss that needs no ground-truth color.
"""

__version__ = "0.1.0"

from . import backbone, checkpoint, colorspace, flowfield, fusion, metrics
from . import pipeline, propagation, srl, synthetic

__all__ = [
    "backbone",
    "checkpoint",
    "colorspace",
    "flowfield",
    "fusion",
    "metrics",
    "pipeline",
    "propagation",
    "srl",
    "synthetic",
    "__version__",
]
