"""Conversions between 8-bit sRGB, CIE Lab, and the normalized working channels.

The pipeline does all color reasoning in Lab: the L channel (scaled to
[0,1]) is the grayscale input, and the network predicts the a/b channels
(scaled by 1/110 to a nominal [-1,1]). Conversions use sRGB with the D65
white point and the standard piecewise transfer function; the inverse
path clamps out-of-gamut values per channel so it is total and
deterministic.

Array conventions: RGB images are (H, W, 3) uint8; Lab images are
(H, W, 3) float64 with channels (L, a, b); the normalized form is a
luminance plane (H, W) plus a chroma stack (2, H, W).
"""

import numpy as np

# Rows: X, Y, Z as linear combinations of linear R, G, B (sRGB/D65).
SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
XYZ_TO_SRGB = np.linalg.inv(SRGB_TO_XYZ)

D65_WHITE = np.array([0.95047, 1.0, 1.08883])

# CIE-standard thresholds written as exact rationals.
_EPS = 216.0 / 24389.0
_KAPPA = 24389.0 / 27.0

LUM_SCALE = 100.0
CHROMA_SCALE = 110.0


def _srgb_to_linear(s):
    return np.where(s <= 0.04045, s / 12.92, ((s + 0.055) / 1.055) ** 2.4)


def _linear_to_srgb(lin):
    # Clip first: the gamma branch is undefined for negative (out-of-gamut)
    # values, and the transfer is monotonic so clipping commutes with it.
    lin = np.clip(lin, 0.0, 1.0)
    return np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * lin ** (1.0 / 2.4) - 0.055)


def rgb_to_lab(img):
    """Convert an (H, W, 3) uint8 sRGB image to (H, W, 3) float64 Lab.

    Achromatic inputs (R=G=B) land on the L axis (|a|, |b| < 0.01), white
    maps to L=100 and black to L=0.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    lin = _srgb_to_linear(img.astype(np.float64) / 255.0)
    xyz = lin @ SRGB_TO_XYZ.T
    t = xyz / D65_WHITE
    f = np.where(t > _EPS, np.cbrt(t), (_KAPPA * t + 16.0) / 116.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_rgb(lab):
    """Convert an (H, W, 3) float64 Lab image to (H, W, 3) uint8 sRGB.

    Out-of-gamut values are clamped per channel, so the function is total:
    any finite Lab input yields a valid image.
    """
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[-1] != 3:
        raise ValueError(f"expected an (H, W, 3) Lab image, got shape {lab.shape}")
    L, a, b = lab[..., 0], lab[..., 1], lab[..., 2]
    fy = (L + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xr = np.where(fx**3 > _EPS, fx**3, (116.0 * fx - 16.0) / _KAPPA)
    yr = np.where(L > _KAPPA * _EPS, fy**3, L / _KAPPA)
    zr = np.where(fz**3 > _EPS, fz**3, (116.0 * fz - 16.0) / _KAPPA)
    xyz = np.stack([xr, yr, zr], axis=-1) * D65_WHITE
    srgb = _linear_to_srgb(xyz @ XYZ_TO_SRGB.T)
    return np.clip(np.rint(srgb * 255.0), 0.0, 255.0).astype(np.uint8)


def normalize(lab):
    """Split a Lab image into the working channels (lum, chroma).

    Returns (lum, chroma): lum is L/100 with shape (H, W); chroma is
    (a, b)/110 stacked to (2, H, W). The scaling round-trips with
    :func:`denormalize` to within 2 ulp (exactly, whenever the quotient is
    representable — e.g. L=50 -> 0.5 -> 50).
    """
    lab = np.asarray(lab)
    lum = lab[..., 0] / LUM_SCALE
    chroma = np.stack([lab[..., 1], lab[..., 2]]) / CHROMA_SCALE
    return lum, chroma


def denormalize(lum, chroma):
    """Inverse of :func:`normalize`: reassemble an (H, W, 3) Lab image."""
    lum = np.asarray(lum)
    chroma = np.asarray(chroma)
    if chroma.shape != (2,) + lum.shape:
        raise ValueError(
            f"chroma shape {chroma.shape} does not match luminance {lum.shape}"
        )
    return np.stack(
        [lum * LUM_SCALE, chroma[0] * CHROMA_SCALE, chroma[1] * CHROMA_SCALE],
        axis=-1,
    )
