"""Synthetic moving-rectangle videos with exact ground-truth flow.

Worlds are integer-velocity colored rectangles translating over a solid
background. Because all motion is integral, the true correspondence
fields contain only whole-pixel shifts, and pulling a frame through the
matching field reproduces its neighbor bit-for-bit wherever the pixel is
actually visible in both frames — the property every warp-sensitive test
in this package leans on. Grayscale inputs are the Lab lightness of the
clean render, optionally corrupted by per-frame flicker and per-pixel
noise (the corruption a temporal method should survive and a per-frame
method should not).
"""

import os
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .colorspace import normalize, rgb_to_lab
from .flowfield import synth_flow, write_flow_dir


@dataclass
class SynthObject:
    """Axis-aligned rectangle with a constant integer per-step velocity."""

    x: int
    y: int
    w: int
    h: int
    color: tuple
    velocity: tuple = (0, 0)

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = getattr(self, name)
            if v != int(v):
                raise ValueError(f"object {name} must be an integer, got {v!r}")
            setattr(self, name, int(v))
        if self.w < 1 or self.h < 1:
            raise ValueError(f"object size {self.w}x{self.h} must be positive")
        vx, vy = self.velocity
        if vx != int(vx) or vy != int(vy):
            raise ValueError(f"velocity {self.velocity} must be integral")
        self.velocity = (int(vx), int(vy))
        self.color = tuple(int(c) for c in self.color)
        if len(self.color) != 3 or not all(0 <= c <= 255 for c in self.color):
            raise ValueError(f"bad color {self.color}")

    def support(self, frame_idx, height, width):
        """Boolean occupancy mask at the given frame, clipped to canvas."""
        x = self.x + frame_idx * self.velocity[0]
        y = self.y + frame_idx * self.velocity[1]
        mask = np.zeros((height, width), dtype=bool)
        x0, x1 = max(x, 0), min(x + self.w, width)
        y0, y1 = max(y, 0), min(y + self.h, height)
        if x0 < x1 and y0 < y1:
            mask[y0:y1, x0:x1] = True
        return mask


@dataclass
class SynthSpec:
    """World description: canvas, background, objects, length, corruption."""

    height: int
    width: int
    n_frames: int
    background: tuple = (128, 128, 128)
    objects: list = field(default_factory=list)
    lum_flicker_sigma: float = 0.0
    lum_noise_sigma: float = 0.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("canvas must be at least 1x1")
        if self.n_frames < 1:
            raise ValueError("need at least one frame")
        self.background = tuple(int(c) for c in self.background)
        for i, obj in enumerate(self.objects):
            for t in range(self.n_frames):
                if not obj.support(t, self.height, self.width).any():
                    raise ValueError(
                        f"object {i} leaves the canvas entirely at frame {t}"
                    )


@dataclass
class SynthVideo:
    """A rendered world: clean color, corrupted gray, exact flows, GT chroma."""

    color: np.ndarray  # (N, H, W, 3) uint8
    gray: np.ndarray  # (N, H, W) float32 in [0, 1]
    flows_fw: np.ndarray  # (N-1, 2, H, W) float32, entry i aligned with i+1
    flows_bw: np.ndarray  # (N-1, 2, H, W) float32, entry i aligned with i
    chroma_gt: np.ndarray  # (N, 2, H, W) float32, normalized ab of the render


def render_frames(spec):
    """Clean color frames of the world, later objects painted on top."""
    frames = np.empty((spec.n_frames, spec.height, spec.width, 3), dtype=np.uint8)
    for t in range(spec.n_frames):
        frame = np.empty((spec.height, spec.width, 3), dtype=np.uint8)
        frame[:] = spec.background
        for obj in spec.objects:
            frame[obj.support(t, spec.height, spec.width)] = obj.color
        frames[t] = frame
    return frames


def oracle_flows(spec):
    """Exact correspondence fields of the rendered motion.

    ``flows_fw[i]`` sits on frame i+1's grid and samples frame i (so a
    rectangle moving +v carries field -v over its support there);
    ``flows_bw[i]`` sits on frame i's grid and samples frame i+1 (field
    +v). Masks are painted in object order, matching the renderer's
    later-on-top rule.
    """
    n, h, w = spec.n_frames, spec.height, spec.width
    flows_fw = np.zeros((n - 1, 2, h, w), dtype=np.float32)
    flows_bw = np.zeros((n - 1, 2, h, w), dtype=np.float32)
    for i in range(n - 1):
        fw_motion = [(o.support(i + 1, h, w), o.velocity) for o in spec.objects]
        bw_motion = [
            (o.support(i, h, w), (-o.velocity[0], -o.velocity[1])) for o in spec.objects
        ]
        flows_fw[i] = synth_flow(fw_motion, h, w)
        flows_bw[i] = synth_flow(bw_motion, h, w)
    return flows_fw, flows_bw


def generate_synthetic(spec, seed=0):
    """Render a world deterministically; the seed drives only the corruption."""
    color = render_frames(spec)
    flows_fw, flows_bw = oracle_flows(spec)

    rng = np.random.default_rng(seed)
    n = spec.n_frames
    gray = np.empty((n, spec.height, spec.width), dtype=np.float32)
    chroma_gt = np.empty((n, 2, spec.height, spec.width), dtype=np.float32)
    for t in range(n):
        lum, chroma = normalize(rgb_to_lab(color[t]))
        g = lum
        if spec.lum_flicker_sigma > 0:
            g = g + rng.normal(0.0, spec.lum_flicker_sigma)
        if spec.lum_noise_sigma > 0:
            g = g + rng.normal(0.0, spec.lum_noise_sigma, size=lum.shape)
        gray[t] = np.clip(g, 0.0, 1.0)
        chroma_gt[t] = chroma
    return SynthVideo(color, gray, flows_fw, flows_bw, chroma_gt)


def save_dataset(video, out_dir):
    """Write the on-disk layout consumed by the training and eval commands.

    frames_color/ and frames_gray/ hold 1-indexed %05d.png files (gray
    stored as round(g*255) 8-bit); flow_fw/ and flow_bw/ hold matching
    .flo files.
    """
    color_dir = os.path.join(out_dir, "frames_color")
    gray_dir = os.path.join(out_dir, "frames_gray")
    os.makedirs(color_dir, exist_ok=True)
    os.makedirs(gray_dir, exist_ok=True)
    for t in range(len(video.color)):
        name = f"{t + 1:05d}.png"
        Image.fromarray(video.color[t]).save(os.path.join(color_dir, name))
        g8 = np.rint(video.gray[t] * 255.0).astype(np.uint8)
        Image.fromarray(g8, mode="L").save(os.path.join(gray_dir, name))
    write_flow_dir(os.path.join(out_dir, "flow_fw"), video.flows_fw)
    write_flow_dir(os.path.join(out_dir, "flow_bw"), video.flows_bw)


_INT_TRIPLE = re.compile(r"[,\s]+")


def parse_synth_spec(path):
    """Parse a flat key=value world file.

    Recognized keys: ``canvas = HxW``, ``frames = N``, ``background =
    R,G,B``, ``flicker = sigma``, ``noise = sigma``, and one ``object =
    x y w h R G B vx vy`` line per rectangle (commas or spaces). Lines
    starting with ``#`` and blank lines are ignored.
    """
    height = width = n_frames = None
    background = (128, 128, 128)
    flicker = noise = 0.0
    objects = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            try:
                if key == "canvas":
                    h_s, w_s = value.lower().split("x")
                    height, width = int(h_s), int(w_s)
                elif key == "frames":
                    n_frames = int(value)
                elif key == "background":
                    background = tuple(int(v) for v in _INT_TRIPLE.split(value))
                elif key == "flicker":
                    flicker = float(value)
                elif key == "noise":
                    noise = float(value)
                elif key == "object":
                    nums = [int(v) for v in _INT_TRIPLE.split(value)]
                    if len(nums) != 9:
                        raise ValueError("need 9 numbers: x y w h R G B vx vy")
                    x, y, w, h, r, g, b, vx, vy = nums
                    objects.append(SynthObject(x, y, w, h, (r, g, b), (vx, vy)))
                else:
                    raise ValueError(f"unknown key {key!r}")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if height is None or n_frames is None:
        raise ValueError(f"{path}: missing required keys (canvas, frames)")
    return SynthSpec(
        height=height,
        width=width,
        n_frames=n_frames,
        background=background,
        objects=objects,
        lum_flicker_sigma=flicker,
        lum_noise_sigma=noise,
    )
