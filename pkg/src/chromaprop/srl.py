"""Self-regularized training of the fusion module.

No ground-truth color is used anywhere: the only objective is that each
predicted chroma map agrees with the flow-warped predictions of the
frames one and two steps ahead, weighted by a visibility mask computed
from the *input luminance* (a pixel whose grayscale content survives
warping is expected to keep its color too; one that does not — occlusion,
bad flow — is down-weighted exponentially). The mask and the flows are
constants to the optimizer; only fusion parameters receive gradients,
and the backbone is frozen for the duration of the run.
"""

import csv
from dataclasses import dataclass

import numpy as np
import torch

from .flowfield import chain_flows, warp
from .propagation import Interval, colorize_interval

_LOSS_EPS = 1e-12  # guards the per-term mean when a crop has no valid pixels


@dataclass
class TrainConfig:
    """Hyperparameters of a fusion training run (defaults: full scale)."""

    interval_len: int = 10
    batch: int = 4
    patch: int = 256
    lr0: float = 5e-5
    lr_halving_period: int = 10000
    alpha: float = 50.0
    warp_distances: tuple = (1, 2)
    iters: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.interval_len < 3:
            raise ValueError("interval_len must be at least 3")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.batch < 1 or self.iters < 0 or self.patch < 1:
            raise ValueError("batch/iters/patch out of range")
        if not self.warp_distances or min(self.warp_distances) < 1:
            raise ValueError("warp_distances must be positive integers")


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    """lr at iteration k: lr0 * 2^-(k // halving_period), exactly."""
    return cfg.lr0 * 2.0 ** (-(iteration // cfg.lr_halving_period))


def visibility_mask(ref, warped, alpha):
    """Per-pixel confidence in (0, 1]: exp(-alpha * ||ref - warped||^2).

    The squared distance sums over the leading channel axis when there
    is one ((C, H, W) or (B, C, H, W) inputs); plain (H, W) planes are
    treated as single-channel. numpy in, numpy out; torch in, torch out.
    """
    is_np = not torch.is_tensor(ref)
    r = torch.as_tensor(np.ascontiguousarray(ref)) if is_np else ref
    w = torch.as_tensor(np.ascontiguousarray(warped)) if not torch.is_tensor(warped) else warped
    if r.shape != w.shape:
        raise ValueError(f"shape mismatch {tuple(r.shape)} vs {tuple(w.shape)}")
    sq = (r - w) ** 2
    if sq.dim() > 2:
        sq = sq.sum(dim=-3)
    out = torch.exp(-alpha * sq)
    return out.numpy() if is_np else out


def temporal_warping_loss(preds, lums, flows_bw, alpha=50.0, distances=(1, 2)):
    """Masked warping-consistency loss over an interval (or a batch of them).

    preds: (N, 2, H, W) or (B, N, 2, H, W) predicted chroma;
    lums: matching (N, H, W) / (B, N, H, W) input luminance;
    flows_bw: (N-1, 2, H, W) / (B, N-1, 2, H, W), entry i aligned with
    frame i and sampling frame i+1. For each distance d and frame i the
    prediction at i+d is warped onto i (d-step flows are composed from
    the adjacent ones), masked by warp validity and the luminance
    visibility mask, and the visibility-weighted mean per-pixel L2
    difference over valid pixels is accumulated; terms are summed over
    (i, d) and averaged over the batch. Masks and flows carry no
    gradient.
    """
    batched = preds.dim() == 5
    if not batched:
        preds, lums, flows_bw = preds[None], lums[None], flows_bw[None]
    n = preds.shape[1]
    if n <= max(distances):
        raise ValueError(
            f"need more than {max(distances)} frames for warp distances {distances}, got {n}"
        )
    total = preds.new_zeros(preds.shape[0])
    for d in distances:
        for i in range(n - d):
            flow = flows_bw[:, i]
            chain_valid = None
            for step in range(1, d):
                flow, v = chain_flows(flow, flows_bw[:, i + step])
                chain_valid = v if chain_valid is None else chain_valid * v
            warped_pred, valid = warp(preds[:, i + d], flow)
            if chain_valid is not None:
                valid = valid * chain_valid
            warped_lum, _ = warp(lums[:, i + d, None], flow)
            mask = visibility_mask(lums[:, i, None], warped_lum, alpha)
            mask = (mask * valid).detach()
            diff = torch.linalg.vector_norm(preds[:, i] - warped_pred, dim=1)
            denom = valid.sum(dim=(-2, -1)).clamp(min=_LOSS_EPS)
            total = total + (mask * diff).sum(dim=(-2, -1)) / denom
    return total.mean()


@dataclass
class VideoSequence:
    """One training video: luminance frames plus both flow directions."""

    lums: np.ndarray  # (T, H, W) float32 in [0, 1]
    flows_fw: np.ndarray  # (T-1, 2, H, W)
    flows_bw: np.ndarray  # (T-1, 2, H, W)
    name: str = ""

    def __post_init__(self):
        self.lums = np.asarray(self.lums, dtype=np.float32)
        self.flows_fw = np.asarray(self.flows_fw, dtype=np.float32)
        self.flows_bw = np.asarray(self.flows_bw, dtype=np.float32)
        t = len(self.lums)
        for label, fl in (("flows_fw", self.flows_fw), ("flows_bw", self.flows_bw)):
            if fl.shape != (t - 1, 2) + self.lums.shape[1:]:
                raise ValueError(
                    f"{self.name or 'sequence'}: {label} shape {fl.shape} does not "
                    f"match {t} frames of {self.lums.shape[1:]}"
                )

    def __len__(self):
        return len(self.lums)


def _sample_batch(sequences, cfg, rng):
    lums, fws, bws = [], [], []
    for _ in range(cfg.batch):
        seq = sequences[rng.integers(len(sequences))]
        t0 = rng.integers(len(seq) - cfg.interval_len + 1)
        h, w = seq.lums.shape[1:]
        ph, pw = min(cfg.patch, h), min(cfg.patch, w)
        y0 = rng.integers(h - ph + 1)
        x0 = rng.integers(w - pw + 1)
        sl = np.s_[..., y0 : y0 + ph, x0 : x0 + pw]
        lums.append(seq.lums[t0 : t0 + cfg.interval_len][sl])
        fws.append(seq.flows_fw[t0 : t0 + cfg.interval_len - 1][sl])
        bws.append(seq.flows_bw[t0 : t0 + cfg.interval_len - 1][sl])
    return (
        torch.as_tensor(np.stack(lums)),
        torch.as_tensor(np.stack(fws)),
        torch.as_tensor(np.stack(bws)),
    )


def train_tcvc(model, ffm, sequences, cfg: TrainConfig, loss_csv=None):
    """Train the fusion module on grayscale sequences; returns (ffm, curve).

    The backbone is frozen (bit-identical before and after); the Adam
    optimizer sees fusion parameters only, with the halving learning-rate
    schedule. Each iteration samples ``cfg.batch`` random intervals of
    ``cfg.interval_len`` frames, crops each one consistently (same patch
    window for every frame and flow of an interval), colorizes them, and
    steps on the temporal warping loss. The curve is a list of
    (iteration, loss, lr) rows, optionally written to ``loss_csv``.
    """
    if not sequences:
        raise ValueError("no training sequences")
    short = [s.name or "?" for s in sequences if len(s) < cfg.interval_len]
    if short:
        raise ValueError(f"sequences shorter than interval_len={cfg.interval_len}: {short}")
    model.requires_grad_(False)
    opt = torch.optim.Adam(ffm.parameters(), lr=cfg.lr0)
    rng = np.random.default_rng(cfg.seed)
    curve = []
    ffm.train()
    for k in range(cfg.iters):
        lr = learning_rate(cfg, k)
        for group in opt.param_groups:
            group["lr"] = lr
        lums, fws, bws = _sample_batch(sequences, cfg, rng)
        preds = colorize_interval(Interval(lums, fws, bws), model, ffm)
        loss = temporal_warping_loss(preds, lums, bws, cfg.alpha, cfg.warp_distances)
        opt.zero_grad()
        loss.backward()
        opt.step()
        curve.append((k, loss.item(), lr))
    ffm.eval()
    if loss_csv is not None:
        with open(loss_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss", "lr"])
            writer.writerows(curve)
    return ffm, curve
