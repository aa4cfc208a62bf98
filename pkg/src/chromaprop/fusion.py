"""Feature fusion: merging the two propagation directions per frame.

For an internal frame the pipeline has two candidate features — one
warped forward from the start anchor, one warped backward from the end
anchor. A weighting network predicts a per-pixel map w in [0, 1] that
linearly blends them, and a refine network adds a residual correction
on top; both see the extractor features of the frame and its two
neighbors as context, and the refine net additionally sees the raw
next-backward and previous-forward features through 1x1 projections.

These are the only parameters the video stage ever trains. Both final
layers start at zero, so a fresh module is exactly a 50/50 blend — the
weight head's sigmoid sits at 0.5 and the residual is zero — and
training departs from pure blending smoothly.
"""

import torch
from torch import nn


def blend(feat_fwd, feat_bwd, weight):
    """Per-pixel linear interpolation: w*fwd + (1-w)*bwd (w broadcasts)."""
    return weight * feat_fwd + (1.0 - weight) * feat_bwd


class FusionModule(nn.Module):
    """Weighting network + refine network over a fixed channel width."""

    def __init__(self, channels: int = 32, hidden: int = 64):
        super().__init__()
        self.channels = channels
        # context (3C) + forward + backward candidates (2C)
        self.weight_net = nn.Sequential(
            nn.Conv2d(5 * channels, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, 1, 3, padding=1),
        )
        # context (3C) + blended (C) + projected neighbors (2C)
        self.refine_net = nn.Sequential(
            nn.Conv2d(6 * channels, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 3, padding=1),
        )
        self.proj_next = nn.Conv2d(channels, channels, 1)
        self.proj_prev = nn.Conv2d(channels, channels, 1)
        for final in (self.weight_net[-1], self.refine_net[-1]):
            nn.init.zeros_(final.weight)
            nn.init.zeros_(final.bias)

    def compute_weight(self, ctx_prev, ctx_cur, ctx_next, feat_fwd, feat_bwd):
        """Blend weight map (B, 1, H, W), squashed into [0, 1]."""
        x = torch.cat([ctx_prev, ctx_cur, ctx_next, feat_fwd, feat_bwd], dim=1)
        return torch.sigmoid(self.weight_net(x))

    def refine(self, ctx_prev, ctx_cur, ctx_next, blended, feat_next_b, feat_prev_f):
        """Residual correction (B, C, H, W) for the blended feature."""
        x = torch.cat(
            [
                ctx_prev,
                ctx_cur,
                ctx_next,
                blended,
                self.proj_next(feat_next_b),
                self.proj_prev(feat_prev_f),
            ],
            dim=1,
        )
        return self.refine_net(x)

    def fuse(
        self,
        ctx_prev,
        ctx_cur,
        ctx_next,
        feat_fwd,
        feat_bwd,
        feat_next_b,
        feat_prev_f,
        weight_override=None,
        refine_enabled=True,
    ):
        """Full fusion: blend by the (possibly overridden) weight, add residual.

        ``weight_override`` pins the blend weight to a constant (1.0 gives
        the forward-only ablation); ``refine_enabled=False`` drops the
        residual. Defaults reproduce the trained behavior.
        """
        if weight_override is None:
            w = self.compute_weight(ctx_prev, ctx_cur, ctx_next, feat_fwd, feat_bwd)
        else:
            w = torch.full_like(feat_fwd[:, :1], float(weight_override))
        fused = blend(feat_fwd, feat_bwd, w)
        if refine_enabled:
            fused = fused + self.refine(
                ctx_prev, ctx_cur, ctx_next, fused, feat_next_b, feat_prev_f
            )
        return fused


def build_fusion(seed: int = 0, channels: int = 32, hidden: int = 64) -> FusionModule:
    """Deterministically initialized fusion module (same seed, same bits)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        module = FusionModule(channels, hidden)
    return module
