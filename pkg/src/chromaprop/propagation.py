"""Bidirectional feature propagation across one interval.

An interval is N consecutive grayscale frames whose first and last
members (the anchors) are colorized directly by the backbone. Anchor
features travel to the internal frames along optical flow: the end
anchor's features are warped backward frame by frame, the start
anchor's features are warped forward, and at every internal frame the
two candidates are fused before prediction. Crucially the *fused*
feature — not the raw warped one — is what continues forward, so each
internal frame inherits everything fusion has already corrected.

Frame/flow layout inside an interval (0-based index i):
``flows_fw[i]`` is aligned with frame i+1 and samples frame i;
``flows_bw[i]`` is aligned with frame i and samples frame i+1.

All functions accept a single interval (frames ``(N, H, W)``) or a
batch (``(B, N, H, W)``); the batched form is what training uses.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .flowfield import warp


@dataclass
class Interval:
    """N frames plus the N-1 flow fields in each temporal direction.

    frames: (N, H, W) or (B, N, H, W) luminance in [0, 1];
    flows_fw / flows_bw: matching (..., N-1, 2, H, W) arrays.
    """

    frames: object
    flows_fw: object
    flows_bw: object

    def __post_init__(self):
        self.frames = _tensor(self.frames)
        self.flows_fw = _tensor(self.flows_fw)
        self.flows_bw = _tensor(self.flows_bw)
        if self.frames.dim() not in (3, 4):
            raise ValueError(f"frames must be (N,H,W) or (B,N,H,W), got {tuple(self.frames.shape)}")
        n = self.frames.shape[-3]
        if n < 2:
            raise ValueError(f"an interval needs at least 2 frames, got {n}")
        for name, fl in (("flows_fw", self.flows_fw), ("flows_bw", self.flows_bw)):
            if fl.shape[-4] != n - 1 or fl.shape[-3] != 2 or fl.shape[-2:] != self.frames.shape[-2:]:
                raise ValueError(
                    f"{name} shape {tuple(fl.shape)} does not match "
                    f"{n} frames of size {tuple(self.frames.shape[-2:])}"
                )

    @property
    def n_frames(self):
        return self.frames.shape[-3]

    @property
    def batched(self):
        return self.frames.dim() == 4


def _tensor(x):
    if torch.is_tensor(x):
        return x.to(torch.float32) if x.dtype != torch.float32 else x
    return torch.as_tensor(np.ascontiguousarray(x), dtype=torch.float32)


def extract_context(interval: Interval, model):
    """Extractor features for every frame: (B, N, C, H, W), no gradients.

    One evaluation per frame serves as anchor feature and as fusion
    context alike. Frames are deliberately *not* flattened into one big
    conv batch: batched convolutions round differently than the
    backbone's single-image path, which would break the guarantee that
    anchor outputs are bit-identical to the backbone's own.
    """
    frames = interval.frames if interval.batched else interval.frames[None]
    b, n, h, w = frames.shape
    with torch.no_grad():
        feats = torch.stack(
            [model.extract(frames[:, i : i + 1]) for i in range(n)], dim=1
        )
    return feats


def backward_pass(feat_last, interval: Interval):
    """Warp the end anchor's features against time: the coarse backward chain.

    ``feat_last`` is the extractor output of frame N-1 (0-based). Returns
    a list aligned with frame indices: entry i holds the backward feature
    of frame i for i in 1..N-1 (entry N-1 being ``feat_last`` itself),
    and entry 0 is None — the start anchor never needs one. Pure warping,
    no learned parts.
    """
    flows_bw = interval.flows_bw if interval.batched else interval.flows_bw[None]
    feat = feat_last if feat_last.dim() == 4 else feat_last[None]
    n = interval.n_frames
    feats = [None] * n
    feats[n - 1] = feat
    for i in range(n - 2, 0, -1):
        feats[i] = warp(feats[i + 1], flows_bw[:, i])[0]
    if not interval.batched:
        feats = [f if f is None else f[0] for f in feats]
    return feats


def forward_pass(
    feat_first,
    back_feats,
    interval: Interval,
    ffm,
    model,
    ctx=None,
    weight_override=None,
    refine_enabled=True,
):
    """Forward chain: warp, fuse with the backward feature, predict, repeat.

    Returns ``(fused, chromas)`` — the fused features and predicted
    chroma maps of the internal frames, in order (lists of length N-2).
    Gradients flow through the fusion parameters; the extractor features
    and flows are constants.
    """
    if ctx is None:
        ctx = extract_context(interval, model)
    flows_fw = interval.flows_fw if interval.batched else interval.flows_fw[None]
    feat = feat_first if feat_first.dim() == 4 else feat_first[None]
    back = [f if (f is None or f.dim() == 4) else f[None] for f in back_feats]
    n = interval.n_frames

    fused_all, chroma_all = [], []
    feat_fwd = warp(feat, flows_fw[:, 0])[0]
    prev_fused = feat
    for i in range(1, n - 1):
        fused = ffm.fuse(
            ctx[:, i - 1],
            ctx[:, i],
            ctx[:, i + 1],
            feat_fwd,
            back[i],
            back[i + 1],
            prev_fused,
            weight_override=weight_override,
            refine_enabled=refine_enabled,
        )
        chroma = model.map_colors(fused)
        fused_all.append(fused)
        chroma_all.append(chroma)
        if i < n - 2:
            feat_fwd = warp(fused, flows_fw[:, i])[0]
            prev_fused = fused
    if not interval.batched:
        fused_all = [f[0] for f in fused_all]
        chroma_all = [c[0] for c in chroma_all]
    return fused_all, chroma_all


def colorize_interval(
    interval: Interval,
    model,
    ffm,
    weight_override=None,
    refine_enabled=True,
    anchor_feats=None,
):
    """Chroma maps for every frame of one interval: (N, 2, H, W).

    Anchors come straight from the backbone (bit-identical to its
    single-image output, whatever the fusion parameters); internal
    frames come from the propagation chains. ``anchor_feats`` optionally
    supplies precomputed (first, last) extractor features so a shared
    anchor is extracted only once per video. Batched intervals yield
    (B, N, 2, H, W).
    """
    ctx = extract_context(interval, model)
    n = interval.n_frames
    if anchor_feats is not None:
        first, last = anchor_feats
        if first is not None:
            ctx = torch.cat([_like_ctx(first, ctx), ctx[:, 1:]], dim=1)
        if last is not None:
            ctx = torch.cat([ctx[:, : n - 1], _like_ctx(last, ctx)], dim=1)
    feat_first = ctx[:, 0]
    feat_last = ctx[:, n - 1]
    with torch.no_grad():
        chroma_first = model.map_colors(feat_first)
        chroma_last = model.map_colors(feat_last)
    back = backward_pass(
        feat_last if interval.batched else feat_last[0], interval
    )
    if n == 2:
        out = torch.stack([chroma_first, chroma_last], dim=1)
        return out if interval.batched else out[0]
    _, chromas = forward_pass(
        feat_first if interval.batched else feat_first[0],
        back,
        interval,
        ffm,
        model,
        ctx=ctx,
        weight_override=weight_override,
        refine_enabled=refine_enabled,
    )
    if not interval.batched:
        chromas = [c[None] for c in chromas]
    out = torch.stack([chroma_first, *chromas, chroma_last], dim=1)
    return out if interval.batched else out[0]


def _like_ctx(feat, ctx):
    feat = feat if feat.dim() == 4 else feat[None]
    return feat.reshape(ctx.shape[0], 1, *ctx.shape[2:])
