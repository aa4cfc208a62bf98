"""Single-image colorization backbones.

The propagation machinery needs exactly two callables from a backbone:
``extract`` (grayscale frame -> deep features) and ``map_colors``
(features -> normalized ab), with ``map_colors(extract(x))`` identical
to the model's direct prediction. Any model satisfying that contract at
the frame's resolution plugs in; models that change resolution must
wrap their own resampling inside ``extract``.

The built-in :class:`ToyBackbone` is a small fully-convolutional net
that keeps full resolution, which is what makes the synthetic flow
oracles in the tests exact. It is trained supervised on (luminance,
chroma) pairs once, then frozen; the propagation stage never updates it.
"""

import numpy as np
import torch
from torch import nn

FEATURE_CHANNELS = 32


class ToyBackbone(nn.Module):
    """Four 3x3 conv+ReLU feature layers and a tanh-bounded 2-channel head."""

    def __init__(self, channels: int = FEATURE_CHANNELS):
        super().__init__()
        self.channels = channels
        layers = []
        in_ch = 1
        for _ in range(4):
            layers += [nn.Conv2d(in_ch, channels, 3, padding=1), nn.ReLU(inplace=True)]
            in_ch = channels
        self.features = nn.Sequential(*layers)
        self.head = nn.Conv2d(channels, 2, 3, padding=1)

    def extract(self, x: torch.Tensor) -> torch.Tensor:
        """Deep features of a (B, 1, H, W) luminance batch: (B, C, H, W)."""
        return self.features(x)

    def map_colors(self, feat: torch.Tensor) -> torch.Tensor:
        """Features -> normalized ab in [-1, 1], shape (B, 2, H, W)."""
        return torch.tanh(self.head(feat))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.map_colors(self.extract(x))


def build_toy_backbone(seed: int = 0, channels: int = FEATURE_CHANNELS) -> ToyBackbone:
    """Deterministically initialized toy backbone (same seed, same bits)."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = ToyBackbone(channels)
    return model.eval()


def _as_frame_tensor(frame) -> torch.Tensor:
    t = torch.as_tensor(np.ascontiguousarray(frame)) if not torch.is_tensor(frame) else frame
    if t.dim() != 2:
        raise ValueError(f"expected an (H, W) frame, got shape {tuple(t.shape)}")
    return t.to(torch.float32)


def process_anchor(frame, model: ToyBackbone):
    """Colorize one anchor frame and keep its features.

    Returns ``(feat, chroma)`` as (C, H, W) and (2, H, W) tensors. The
    chroma equals the backbone's direct single-image output bit-exactly
    (it *is* that output; the split just exposes the intermediate).
    """
    x = _as_frame_tensor(frame)[None, None]
    with torch.no_grad():
        feat = model.extract(x)
        chroma = model.map_colors(feat)
    return feat[0], chroma[0]


def train_toy_backbone(model, dataset, steps, lr=1e-3, batch_size=8, seed=0):
    """Fit the toy backbone on (luminance, chroma) pairs; freeze it after.

    dataset is a sequence of ``(lum (H, W), chroma (2, H, W))`` array
    pairs (all the same size). Plain Adam on mean squared ab error.
    Returns ``(model, losses)`` with one loss per step; the model comes
    back with ``requires_grad`` off — propagation never trains it.
    """
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    lums = torch.stack([_as_frame_tensor(lum)[None] for lum, _ in dataset])
    chromas = torch.stack(
        [torch.as_tensor(np.asarray(ab, dtype=np.float32)) for _, ab in dataset]
    )
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    losses = []
    model.train()
    for _ in range(steps):
        idx = torch.randint(len(dataset), (min(batch_size, len(dataset)),), generator=gen)
        pred = model(lums[idx])
        loss = torch.mean((pred - chromas[idx]) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(loss.item())
    model.eval()
    model.requires_grad_(False)
    return model, losses
