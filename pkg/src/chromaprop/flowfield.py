"""Flow fields: differentiable warping, composition, occlusion, and .flo I/O.

Convention used everywhere in this package: a flow field carrying frame
``a`` onto frame ``b``'s grid is a (2, H, W) array *aligned with b* —
output pixel p corresponds to location ``p + uv(p)`` in ``a``, with
``uv[0]`` the horizontal (column) and ``uv[1]`` the vertical (row)
displacement. ``warp(frame_a, field)`` then produces the b-aligned image
in a single backward-sampling pass.

The sampler is a hand-rolled gather-based bilinear interpolation rather
than ``grid_sample``: the normalized-coordinate round trip inside
grid_sample is not exact for zero or integer flows, and the propagation
chains here rely on those cases being bit-exact. Out-of-bounds samples
clamp to the border and are flagged in a validity mask (1 = the sample
point fell inside [0, W-1] x [0, H-1]). Gradients flow through the
sampled source values only; the flow itself is always treated as a
constant.
"""

import os
import struct

import numpy as np
import torch

FLO_MAGIC = 202021.25
FLO_MAGIC_BYTES = struct.pack("<f", FLO_MAGIC)


class FlowFormatError(ValueError):
    """Raised for malformed .flo files."""


def _warp_torch(src, flow):
    """Core batched sampler: src (B,C,H,W), flow (B,2,H,W) -> (out, valid)."""
    b, c, h, w = src.shape
    flow = flow.detach()
    dtype = torch.promote_types(src.dtype, flow.dtype)
    if not dtype.is_floating_point:
        dtype = torch.float32
    src = src.to(dtype)
    flow = flow.to(dtype)

    xs = torch.arange(w, dtype=dtype)
    ys = torch.arange(h, dtype=dtype)
    gx = xs.view(1, 1, w) + flow[:, 0]
    gy = ys.view(1, h, 1) + flow[:, 1]

    valid = ((gx >= 0) & (gx <= w - 1) & (gy >= 0) & (gy <= h - 1)).to(dtype)

    gx = gx.clamp(0, w - 1)
    gy = gy.clamp(0, h - 1)
    x0 = gx.floor()
    y0 = gy.floor()
    fx = (gx - x0).unsqueeze(1)
    fy = (gy - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=w - 1)
    y1 = (y0 + 1).clamp(max=h - 1)

    flat = src.reshape(b, c, h * w)

    def take(yi, xi):
        idx = (yi * w + xi).reshape(b, 1, h * w).expand(b, c, h * w)
        return flat.gather(2, idx).reshape(b, c, h, w)

    out = (
        (1 - fx) * (1 - fy) * take(y0, x0)
        + fx * (1 - fy) * take(y0, x1)
        + (1 - fx) * fy * take(y1, x0)
        + fx * fy * take(y1, x1)
    )
    return out, valid


def _check_dims(src_shape, flow_shape):
    if src_shape[-2:] != flow_shape[-2:]:
        raise ValueError(
            f"flow spatial dims {tuple(flow_shape[-2:])} do not match "
            f"source dims {tuple(src_shape[-2:])}"
        )


def warp(src, flow):
    """Backward-warp ``src`` by ``flow``; returns ``(warped, valid)``.

    src may be (H, W), (C, H, W), or batched (B, C, H, W); flow is
    (2, H, W), or (B, 2, H, W) for batched input. numpy in, numpy out;
    torch in, torch out (differentiable with respect to src). Zero flow
    reproduces src bit-exactly, and constant integer flow is an exact
    index shift on interior pixels.
    """
    is_np = not torch.is_tensor(src)
    src_t = torch.as_tensor(np.ascontiguousarray(src)) if is_np else src
    flow_t = torch.as_tensor(np.ascontiguousarray(flow)) if not torch.is_tensor(flow) else flow
    _check_dims(src_t.shape, flow_t.shape)

    if src_t.dim() == 2:
        out, valid = _warp_torch(src_t[None, None], flow_t[None])
        out, valid = out[0, 0], valid[0]
    elif src_t.dim() == 3:
        out, valid = _warp_torch(src_t[None], flow_t[None])
        out, valid = out[0], valid[0]
    elif src_t.dim() == 4:
        if flow_t.dim() != 4:
            raise ValueError("batched source needs a batched (B,2,H,W) flow")
        out, valid = _warp_torch(src_t, flow_t)
    else:
        raise ValueError(f"unsupported source rank {src_t.dim()}")

    if is_np:
        return out.numpy(), valid.numpy()
    return out, valid


def chain_flows(f_ba, f_cb):
    """Compose correspondence fields: a->b then b->c gives a->c.

    ``f_ba`` is aligned with a (sampling b), ``f_cb`` aligned with b
    (sampling c); the result is aligned with a and samples c:
    ``uv(p) = f_ba(p) + f_cb(p + f_ba(p))``. Returns (flow, valid) where
    valid marks pixels whose intermediate lookup stayed in bounds.
    """
    stepped, valid = warp(f_cb, f_ba)
    return f_ba + stepped, valid


def occlusion_mask(flow_fwd, flow_bwd):
    """Forward-backward consistency mask on ``flow_fwd``'s grid (1 = visible).

    ``flow_fwd`` carries the reference frame onto the other frame's
    content (i.e. for a frame pair (i, i+1) and a mask on frame i, pass
    the field aligned with i); ``flow_bwd`` is the opposite direction.
    A pixel is visible when ``|f + g|^2 < 0.01*(|f|^2 + |g|^2) + 0.5``
    with ``g = warp(flow_bwd, flow_fwd)``.
    """
    flow_fwd = np.asarray(flow_fwd, dtype=np.float64)
    flow_bwd = np.asarray(flow_bwd, dtype=np.float64)
    _check_dims(flow_fwd.shape, flow_bwd.shape)
    g, _ = warp(flow_bwd, flow_fwd)
    lhs = ((flow_fwd + g) ** 2).sum(axis=0)
    rhs = 0.01 * ((flow_fwd**2).sum(axis=0) + (g**2).sum(axis=0)) + 0.5
    return (lhs < rhs).astype(np.float64)


def synth_flow(motion, h, w):
    """Exact forward-time field of translational motion.

    ``motion`` is either a global per-step content translation (dx, dy)
    or an iterable of (mask, (dx, dy)) pairs over a static background,
    with each (H, W) boolean mask given on the destination (later)
    frame's grid. Content moving by +d means the later frame samples the
    earlier one at -d, so the returned field is the negated translation.
    The matching backward-time field is ``synth_flow`` of the negated
    motion (with masks on the earlier frame).
    """
    uv = np.zeros((2, h, w), dtype=np.float32)
    if len(motion) == 2 and np.isscalar(motion[0]):
        dx, dy = motion
        uv[0] -= dx
        uv[1] -= dy
        return uv
    for mask, (dx, dy) in motion:
        uv[0][mask] = -dx
        uv[1][mask] = -dy
    return uv


def write_flo(path, flow):
    """Write a (2, H, W) field as a Middlebury .flo file (float32)."""
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[0] != 2:
        raise ValueError(f"expected a (2, H, W) flow, got shape {flow.shape}")
    _, h, w = flow.shape
    data = np.empty((h, w, 2), dtype="<f4")
    data[..., 0] = flow[0]
    data[..., 1] = flow[1]
    with open(path, "wb") as fh:
        fh.write(FLO_MAGIC_BYTES)
        fh.write(struct.pack("<ii", w, h))
        fh.write(data.tobytes())


def read_flo(path):
    """Read a Middlebury .flo file into a (2, H, W) float32 field."""
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12:
            raise FlowFormatError(f"{path}: truncated header")
        (magic,) = struct.unpack("<f", header[:4])
        if magic != FLO_MAGIC:
            raise FlowFormatError(f"{path}: bad magic {magic!r}")
        w, h = struct.unpack("<ii", header[4:12])
        if w <= 0:
            raise FlowFormatError(f"{path}: nonpositive width {w}")
        if h <= 0:
            raise FlowFormatError(f"{path}: nonpositive height {h}")
        payload = fh.read()
    expected = w * h * 2 * 4
    if len(payload) != expected:
        raise FlowFormatError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {expected})"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, 2)
    return np.ascontiguousarray(np.moveaxis(data, -1, 0))


def read_flow_dir(dirname, count=None):
    """Read ``%05d.flo`` files (index from 1) as a (T, 2, H, W) array."""
    names = sorted(n for n in os.listdir(dirname) if n.endswith(".flo"))
    if count is not None and len(names) != count:
        raise FlowFormatError(
            f"{dirname}: expected {count} flow files, found {len(names)}"
        )
    if not names:
        raise FlowFormatError(f"{dirname}: no .flo files")
    return np.stack([read_flo(os.path.join(dirname, n)) for n in names])


def write_flow_dir(dirname, flows):
    """Write a (T, 2, H, W) stack as ``%05d.flo`` files, index from 1."""
    os.makedirs(dirname, exist_ok=True)
    for i, flow in enumerate(flows, start=1):
        write_flo(os.path.join(dirname, f"{i:05d}.flo"), flow)
