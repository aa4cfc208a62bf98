"""Evaluation metrics for colorized video.

Temporal consistency is measured two ways: CDC (mean Jensen-Shannon
divergence between per-channel color histograms of frames 1, 2, and 4
steps apart — low when the palette is stable) and warp error (masked
photometric difference between a frame and its flow-warped successor —
low when colors track motion). Fidelity against ground truth uses PSNR
on 8-bit RGB and mean Euclidean Lab distance; colorfulness is the
Hasler-Suesstrunk opponent-axis statistic, which flags washed-out output
that the consistency numbers alone would reward.

Histograms use 256 bins (one per 8-bit level) and the JS divergence uses
the natural log; both choices, plus the PSNR color space, are recorded
in every MetricsReport so numbers are never compared across conventions
silently.
"""

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .colorspace import rgb_to_lab
from .flowfield import occlusion_mask, warp

logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
HISTOGRAM_BINS = 256

TABLE_COLUMNS = ("Warp Error", "CDC", "PSNR", "L2 Error", "Colorfulness")
_COLUMN_KEYS = ("warp_error", "cdc", "psnr", "lab_l2", "colorfulness")


def histogram(img, channel):
    """Normalized 256-bin histogram of one channel of an 8-bit RGB image."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 image, got {img.dtype}")
    counts = np.bincount(img[..., channel].ravel(), minlength=HISTOGRAM_BINS)
    return counts / counts.sum()


def js_divergence(p, q):
    """Jensen-Shannon divergence between two histograms, natural log.

    Bounded by [0, ln 2]; zero-probability bins contribute nothing
    (0 * log 0 = 0 by convention).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float((a[nz] * np.log(a[nz] / m[nz])).sum())

    return 0.5 * kl(p) + 0.5 * kl(q)


def _frame_histograms(frames):
    return [[histogram(f, c) for c in range(3)] for f in frames]


def _cdc_t_from_histograms(hists, t):
    n = len(hists)
    if n <= t:
        raise ValueError(f"need more than {t} frames for stride {t}, got {n}")
    total = 0.0
    for i in range(n - t):
        for c in range(3):
            total += js_divergence(hists[i][c], hists[i + t][c])
    return total / (3 * (n - t))


def cdc_t(frames, t):
    """Mean per-channel JS divergence between frames ``t`` apart."""
    return _cdc_t_from_histograms(_frame_histograms(frames), t)


def cdc(frames):
    """Color distribution consistency: mean of the t=1, 2, 4 strides."""
    if len(frames) <= 4:
        raise ValueError(f"CDC needs more than 4 frames, got {len(frames)}")
    hists = _frame_histograms(frames)
    return sum(_cdc_t_from_histograms(hists, t) for t in (1, 2, 4)) / 3.0


def _to_unit(frames):
    frames = np.asarray(frames)
    if frames.dtype == np.uint8:
        return frames.astype(np.float64) / 255.0
    return frames.astype(np.float64)


def warp_error(frames, flows_bw, masks=None):
    """Masked photometric error between each frame and its warped successor.

    For each pair (i, i+1), frame i+1 is pulled onto frame i's grid with
    ``flows_bw[i]`` (the field aligned with i) and compared in [0, 1]
    RGB; the squared L2 color difference is averaged over pixels where
    both the supplied mask and the warp's own validity are nonzero.
    ``masks`` holds one (H, W) weight map per pair (defaults to all
    ones); a pair whose combined mask is all zero is skipped with a
    warning. Returns the mean over scored pairs, or NaN if every pair
    was skipped.
    """
    frames = _to_unit(frames)
    n = len(frames)
    if len(flows_bw) != n - 1:
        raise ValueError(f"need {n - 1} flows for {n} frames, got {len(flows_bw)}")
    errors = []
    for i in range(n - 1):
        src = np.moveaxis(frames[i + 1], -1, 0)
        warped, valid = warp(src, flows_bw[i])
        m = valid if masks is None else np.asarray(masks[i], dtype=np.float64) * valid
        weight = m.sum()
        if weight == 0:
            logger.warning("warp_error: pair %d skipped (all-zero mask)", i)
            continue
        sq = ((np.moveaxis(frames[i], -1, 0) - warped) ** 2).sum(axis=0)
        errors.append(float((m * sq).sum() / weight))
    if not errors:
        logger.warning("warp_error: every pair skipped; no score")
        return float("nan")
    return float(np.mean(errors))


def occlusion_masks(flows_fw, flows_bw):
    """Per-pair visibility masks for warp_error, on each earlier frame's grid.

    ``flows_bw[i]`` is aligned with frame i (the reference of pair i),
    so it plays the forward role in the consistency check and
    ``flows_fw[i]`` the reverse.
    """
    return [occlusion_mask(flows_bw[i], flows_fw[i]) for i in range(len(flows_bw))]


def psnr(pred, gt):
    """PSNR in dB over 8-bit RGB, capped at 99 for (near-)identical inputs."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mse = ((pred - gt) ** 2).mean()
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * math.log10(255.0**2 / mse), PSNR_CAP)


def lab_l2(pred, gt):
    """Mean per-pixel Euclidean distance in Lab space."""
    if np.asarray(pred).shape != np.asarray(gt).shape:
        raise ValueError("shape mismatch")
    diff = rgb_to_lab(pred) - rgb_to_lab(gt)
    return float(np.sqrt((diff**2).sum(axis=-1)).mean())


def colorfulness(img):
    """Hasler-Suesstrunk colorfulness of an RGB image (0 for pure gray)."""
    img = np.asarray(img, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    rg = r - g
    yb = 0.5 * (r + g) - b
    sigma = math.sqrt(rg.var() + yb.var())
    mu = math.sqrt(rg.mean() ** 2 + yb.mean() ** 2)
    return sigma + 0.3 * mu


def evaluate_video(pred, gt=None, flows_fw=None, flows_bw=None):
    """All metrics for one video; entries without the needed inputs are None.

    ``pred`` is a (N, H, W, 3) uint8 stack. CDC needs N > 4, warp error
    needs backward flows (forward flows additionally enable occlusion
    masking), PSNR/Lab L2/colorfulness-vs-GT need ``gt``.
    """
    pred = np.asarray(pred)
    out = {
        "cdc": None,
        "cdc_1": None,
        "cdc_2": None,
        "cdc_4": None,
        "warp_error": None,
        "psnr": None,
        "lab_l2": None,
        "colorfulness": float(np.mean([colorfulness(f) for f in pred])),
    }
    if len(pred) > 4:
        hists = _frame_histograms(pred)
        for t in (1, 2, 4):
            out[f"cdc_{t}"] = _cdc_t_from_histograms(hists, t)
        out["cdc"] = (out["cdc_1"] + out["cdc_2"] + out["cdc_4"]) / 3.0
    if flows_bw is not None:
        masks = None
        if flows_fw is not None:
            masks = occlusion_masks(flows_fw, flows_bw)
        out["warp_error"] = warp_error(pred, flows_bw, masks)
    if gt is not None:
        out["psnr"] = float(np.mean([psnr(p, g) for p, g in zip(pred, gt)]))
        out["lab_l2"] = float(np.mean([lab_l2(p, g) for p, g in zip(pred, gt)]))
    return out


@dataclass
class MetricsReport:
    """Per-video metric rows plus the conventions they were computed under."""

    videos: dict = field(default_factory=dict)
    psnr_space: str = "rgb"
    flow_source: str = "none"
    js_log: str = "natural"
    histogram_bins: int = HISTOGRAM_BINS

    def add(self, name, row):
        self.videos[name] = dict(row)

    def aggregate(self):
        """Mean of each metric over the videos that have it."""
        keys = sorted({k for row in self.videos.values() for k in row})
        agg = {}
        for k in keys:
            vals = [row[k] for row in self.videos.values() if row.get(k) is not None]
            vals = [v for v in vals if not (isinstance(v, float) and math.isnan(v))]
            agg[k] = float(np.mean(vals)) if vals else None
        return agg

    def to_json(self, path=None):
        payload = {
            "provenance": {
                "psnr_space": self.psnr_space,
                "flow_source": self.flow_source,
                "js_log": self.js_log,
                "histogram_bins": self.histogram_bins,
            },
            "videos": self.videos,
            "aggregate": self.aggregate(),
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def table(self):
        """Aligned text table, one row per video plus a mean row."""
        name_w = max([len(n) for n in self.videos] + [len("video"), len("mean")])
        header = "video".ljust(name_w) + "".join(f"{c:>14}" for c in TABLE_COLUMNS)
        lines = [header, "-" * len(header)]

        def fmt(row):
            cells = []
            for key in _COLUMN_KEYS:
                v = row.get(key)
                cells.append(f"{v:>14.4f}" if v is not None else f"{'-':>14}")
            return "".join(cells)

        for name in sorted(self.videos):
            lines.append(name.ljust(name_w) + fmt(self.videos[name]))
        lines.append("mean".ljust(name_w) + fmt(self.aggregate()))
        return "\n".join(lines)
