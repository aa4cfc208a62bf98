"""End-to-end video colorization: planning, inference, ensembling, and I/O.

A long video is cut into intervals that share their boundary frames, so
every anchor is extracted once and both neighboring intervals see the
identical feature — the output at anchors is the backbone's own, and the
seams carry no discontinuity by construction. Grayscale input frames are
interpreted as Lab lightness (8-bit gray maps to L/100 via value/255;
RGB input is converted through Lab and only its L kept); predicted
chroma is joined back with that lightness and encoded to sRGB.

Flow fields come from ``.flo`` directories: an explicit ``--flow-dir``
if given, else ``flow_fw``/``flow_bw`` directories next to the frame
directory. There is no estimator in this package — flows are an input
contract.
"""

import os
from dataclasses import dataclass

import numpy as np
import torch
from PIL import Image

from .colorspace import denormalize, lab_to_rgb, normalize, rgb_to_lab
from .flowfield import read_flow_dir
from .metrics import MetricsReport, evaluate_video
from .propagation import Interval, colorize_interval
from .srl import VideoSequence

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


def plan_intervals(t, n):
    """Cut frames 1..t into intervals of length n sharing boundary anchors.

    Returns 1-based inclusive (start, end) pairs: [1, n], [n, 2n-1], ...
    with the final interval truncated at t. Because consecutive
    intervals share their boundary frame, a truncated tail always has at
    least two frames.
    """
    if t < 2:
        raise ValueError(f"need at least 2 frames, got {t}")
    if n < 2:
        raise ValueError(f"interval length must be at least 2, got {n}")
    plan = []
    start = 1
    while True:
        end = min(start + n - 1, t)
        plan.append((start, end))
        if end == t:
            return plan
        start = end


def colorize_video(
    lums, model, ffm, n, flows_fw, flows_bw, weight_override=None, refine_enabled=True
):
    """Chroma maps (T, 2, H, W) for a whole video at interval length n.

    Shared anchors are extracted once and injected into both adjacent
    intervals, so anchor predictions are bit-identical to the backbone's
    single-frame output regardless of the fusion parameters.
    """
    lums_t = torch.as_tensor(np.ascontiguousarray(lums), dtype=torch.float32)
    fw_t = torch.as_tensor(np.ascontiguousarray(flows_fw), dtype=torch.float32)
    bw_t = torch.as_tensor(np.ascontiguousarray(flows_bw), dtype=torch.float32)
    t = lums_t.shape[0]
    if fw_t.shape[0] != t - 1 or bw_t.shape[0] != t - 1:
        raise ValueError(
            f"need {t - 1} flow fields per direction for {t} frames, "
            f"got {fw_t.shape[0]} fw / {bw_t.shape[0]} bw"
        )
    plan = plan_intervals(t, n)
    chromas = torch.empty(t, 2, *lums_t.shape[1:])
    memo = {}
    with torch.no_grad():
        for start, end in plan:
            for idx in (start, end):
                if idx not in memo:
                    memo[idx] = model.extract(lums_t[idx - 1][None, None])[0]
            sub = Interval(
                lums_t[start - 1 : end],
                fw_t[start - 1 : end - 1],
                bw_t[start - 1 : end - 1],
            )
            out = colorize_interval(
                sub,
                model,
                ffm,
                weight_override=weight_override,
                refine_enabled=refine_enabled,
                anchor_feats=(memo[start], memo[end]),
            )
            chromas[start - 1 : end] = out
    return chromas.numpy()


def ensemble_colorize(
    lums, model, ffm, ns, flows_fw, flows_bw, weight_override=None, refine_enabled=True
):
    """Mean of the per-N chroma maps, averaged in normalized ab space.

    Averaging happens before any conversion to RGB so no quantization
    bias enters; a singleton list reduces to the plain path exactly.
    """
    if not ns:
        raise ValueError("no interval lengths given")
    acc = None
    for n in ns:
        maps = colorize_video(
            lums, model, ffm, n, flows_fw, flows_bw, weight_override, refine_enabled
        )
        acc = maps if acc is None else acc + maps
    return acc / np.float32(len(ns))


def assemble_rgb(lums, chromas):
    """Join input lightness with predicted chroma: (T, H, W, 3) uint8 sRGB."""
    lums = np.asarray(lums)
    chromas = np.asarray(chromas)
    frames = [
        lab_to_rgb(denormalize(lum.astype(np.float64), ch.astype(np.float64)))
        for lum, ch in zip(lums, chromas)
    ]
    return np.stack(frames)


# --- frame and flow I/O -------------------------------------------------------


def _image_names(dirname):
    try:
        names = sorted(
            n for n in os.listdir(dirname) if n.lower().endswith(IMAGE_EXTENSIONS)
        )
    except OSError as exc:
        raise ValueError(f"cannot list frames in {dirname}: {exc}") from None
    if not names:
        raise ValueError(f"no image frames in {dirname}")
    return names


def read_gray_frames(dirname):
    """Load a frame directory as luminance in [0, 1]: (frames, names).

    8-bit grayscale images map value/255 straight to normalized
    lightness; color images are converted to Lab and reduced to L/100.
    """
    lums, names = [], _image_names(dirname)
    for name in names:
        img = Image.open(os.path.join(dirname, name))
        if img.mode in ("L", "I;16", "I"):
            arr = np.asarray(img.convert("L"), dtype=np.float32) / 255.0
        else:
            arr = normalize(rgb_to_lab(np.asarray(img.convert("RGB"))))[0]
            arr = arr.astype(np.float32)
        lums.append(arr)
    _check_same_shape(lums, names, dirname)
    return np.stack(lums), names


def read_color_frames(dirname):
    """Load a frame directory as (T, H, W, 3) uint8 RGB plus filenames."""
    names = _image_names(dirname)
    frames = [
        np.asarray(Image.open(os.path.join(dirname, n)).convert("RGB")) for n in names
    ]
    _check_same_shape(frames, names, dirname)
    return np.stack(frames), names


def _check_same_shape(arrays, names, dirname):
    first = arrays[0].shape
    for arr, name in zip(arrays, names):
        if arr.shape != first:
            raise ValueError(
                f"{dirname}: frame size changes at {name} "
                f"({arr.shape[:2]} vs {first[:2]})"
            )


def write_frames(dirname, frames, names):
    """Write RGB frames as PNGs under the original basenames."""
    os.makedirs(dirname, exist_ok=True)
    for frame, name in zip(frames, names):
        stem = os.path.splitext(name)[0]
        Image.fromarray(frame).save(os.path.join(dirname, stem + ".png"))


def find_flows(frames_dir, flow_dir=None, count=None):
    """Locate and load both flow directions for a frame directory.

    Precedence: an explicit ``flow_dir`` containing ``flow_fw``/
    ``flow_bw`` subdirectories, else those subdirectories next to
    ``frames_dir``. Returns (flows_fw, flows_bw, source_path); ``count``
    (the frame count) enforces T-1 fields per direction.
    """
    base = flow_dir if flow_dir is not None else os.path.dirname(os.path.abspath(frames_dir))
    fw_dir = os.path.join(base, "flow_fw")
    bw_dir = os.path.join(base, "flow_bw")
    if not (os.path.isdir(fw_dir) and os.path.isdir(bw_dir)):
        raise ValueError(
            f"no flow fields under {base}: expected flow_fw/ and flow_bw/ "
            "(pass --flow-dir or place them next to the frame directory)"
        )
    per_dir = None if count is None else count - 1
    return read_flow_dir(fw_dir, per_dir), read_flow_dir(bw_dir, per_dir), base


def load_sequence(dirname):
    """Load one training sequence dir (frames_gray + flow_fw + flow_bw)."""
    gray_dir = os.path.join(dirname, "frames_gray")
    if not os.path.isdir(gray_dir):
        raise ValueError(f"{dirname}: no frames_gray directory")
    lums, _ = read_gray_frames(gray_dir)
    flows_fw, flows_bw, _ = find_flows(gray_dir, flow_dir=dirname, count=len(lums))
    return VideoSequence(
        lums, flows_fw, flows_bw, name=os.path.basename(os.path.normpath(dirname))
    )


# --- evaluation orchestration ---------------------------------------------------


@dataclass
class _EvalJob:
    name: str
    pred_dir: str
    gt_dir: object
    flow_dir: object


def _video_jobs(pred_dir, gt_dir, flow_dir):
    direct = any(
        n.lower().endswith(IMAGE_EXTENSIONS) for n in os.listdir(pred_dir)
    )
    if direct:
        name = os.path.basename(os.path.normpath(pred_dir))
        return [_EvalJob(name, pred_dir, gt_dir, flow_dir)]
    subs = sorted(
        n for n in os.listdir(pred_dir) if os.path.isdir(os.path.join(pred_dir, n))
    )
    if not subs:
        raise ValueError(f"{pred_dir}: no frames and no video subdirectories")
    jobs = []
    for sub in subs:
        jobs.append(
            _EvalJob(
                sub,
                os.path.join(pred_dir, sub),
                os.path.join(gt_dir, sub) if gt_dir else None,
                os.path.join(flow_dir, sub) if flow_dir else None,
            )
        )
    return jobs


def evaluate_dirs(pred_dir, gt_dir=None, flow_dir=None):
    """Score a prediction directory (one video, or one subdirectory each).

    Ground truth and flows are matched by video name when given. Returns
    a MetricsReport; conversion conventions ride along in its provenance
    fields.
    """
    report = MetricsReport(flow_source=str(flow_dir) if flow_dir else "none")
    for job in _video_jobs(pred_dir, gt_dir, flow_dir):
        pred, _ = read_color_frames(job.pred_dir)
        gt = None
        if job.gt_dir is not None:
            gt, _ = read_color_frames(job.gt_dir)
            if len(gt) != len(pred):
                raise ValueError(
                    f"{job.name}: {len(pred)} predicted frames vs {len(gt)} ground truth"
                )
        flows_fw = flows_bw = None
        if job.flow_dir is not None:
            flows_fw, flows_bw, _ = find_flows(
                job.pred_dir, flow_dir=job.flow_dir, count=len(pred)
            )
        report.add(job.name, evaluate_video(pred, gt, flows_fw, flows_bw))
    return report
