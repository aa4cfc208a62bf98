import numpy as np
import pytest
import torch

from chromaprop import flowfield

from oracles import bilinear_warp_reference


def _const_flow(dx, dy, h, w, dtype=np.float64):
    uv = np.zeros((2, h, w), dtype=dtype)
    uv[0] += dx
    uv[1] += dy
    return uv


# ---------------------------------------------------------------- warping


def test_zero_flow_is_bitwise_identity():
    rng = np.random.default_rng(0)
    src = rng.normal(size=(3, 9, 7))
    out, valid = flowfield.warp(src, np.zeros((2, 9, 7)))
    assert np.array_equal(out, src)
    assert np.all(valid == 1.0)


def test_zero_flow_identity_torch_float32():
    src = torch.randn(4, 6, 5)
    out, valid = flowfield.warp(src, torch.zeros(2, 6, 5))
    assert torch.equal(out, src)
    assert torch.all(valid == 1)


def test_impulse_shifts_against_oracle():
    src = np.zeros((1, 11, 11))
    src[0, 5, 5] = 1.0
    flow = _const_flow(1.0, 0.0, 11, 11)
    out, valid = flowfield.warp(src, flow)
    ref, ref_valid = bilinear_warp_reference(src, flow)
    # output pixel (r, c) samples src at (r, c+1): impulse lands at (5, 4)
    assert out[0, 5, 4] == 1.0
    assert out[0, 5, 5] == 0.0
    assert np.array_equal(out, ref)
    assert np.array_equal(valid, ref_valid)


def test_half_pixel_ramp_is_exact_on_interior():
    h, w = 6, 8
    src = np.tile(np.arange(w, dtype=np.float64), (h, 1))[None]
    out, _ = flowfield.warp(src, _const_flow(0.5, 0.0, h, w))
    assert np.allclose(out[0, :, : w - 1], src[0, :, : w - 1] + 0.5)


def test_integer_shift_matches_roll_on_interior():
    rng = np.random.default_rng(3)
    src = rng.normal(size=(2, 10, 12))
    out, valid = flowfield.warp(src, _const_flow(2.0, -1.0, 10, 12))
    # sample point (r-1, c+2): interior wherever that stays in bounds
    shifted = np.roll(src, shift=(1, -2), axis=(1, 2))
    interior = np.zeros((10, 12), dtype=bool)
    interior[1:, : 12 - 2] = True
    assert np.array_equal(out[:, interior], shifted[:, interior])
    assert np.array_equal(valid, interior.astype(float))


def test_random_flow_matches_bruteforce_oracle():
    rng = np.random.default_rng(11)
    src = rng.normal(size=(3, 8, 9))
    flow = rng.uniform(-3, 3, size=(2, 8, 9))
    out, valid = flowfield.warp(src, flow)
    ref, ref_valid = bilinear_warp_reference(src, flow)
    assert np.allclose(out, ref, atol=1e-6)
    assert np.array_equal(valid, ref_valid)


def test_border_clamp_and_validity():
    src = np.arange(12, dtype=np.float64).reshape(1, 3, 4)
    out, valid = flowfield.warp(src, _const_flow(-1.0, 0.0, 3, 4))
    assert np.all(valid[:, 0] == 0.0)  # column 0 samples x=-1
    assert np.all(valid[:, 1:] == 1.0)
    assert np.array_equal(out[0][:, 0], src[0][:, 0])  # clamped to border


def test_boundary_coordinate_is_still_valid():
    # sampling exactly at x = W-1 is in bounds
    src = np.ones((1, 2, 3))
    flow = np.zeros((2, 2, 3))
    flow[0, :, 0] = 2.0  # 0 + 2 = 2 = W-1
    _, valid = flowfield.warp(src, flow)
    assert np.all(valid == 1.0)


def test_linearity_in_source():
    rng = np.random.default_rng(5)
    s1 = rng.normal(size=(2, 7, 7))
    s2 = rng.normal(size=(2, 7, 7))
    flow = rng.uniform(-2, 2, size=(2, 7, 7))
    a, b = 1.7, -0.4
    lhs, _ = flowfield.warp(a * s1 + b * s2, flow)
    r1, _ = flowfield.warp(s1, flow)
    r2, _ = flowfield.warp(s2, flow)
    assert np.allclose(lhs, a * r1 + b * r2, atol=1e-12)


def test_batched_matches_per_sample():
    rng = np.random.default_rng(8)
    src = torch.tensor(rng.normal(size=(3, 2, 6, 5)))
    flow = torch.tensor(rng.uniform(-2, 2, size=(3, 2, 6, 5)))
    out, valid = flowfield.warp(src, flow)
    for i in range(3):
        oi, vi = flowfield.warp(src[i], flow[i])
        assert torch.equal(out[i], oi)
        assert torch.equal(valid[i], vi)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(21)
    for seed in range(5):
        g = np.random.default_rng(seed)
        src = torch.tensor(g.normal(size=(1, 8, 8)), requires_grad=True)
        flow = torch.tensor(g.uniform(-2, 2, size=(2, 8, 8)))
        weights = torch.tensor(g.normal(size=(1, 8, 8)))
        loss = (flowfield.warp(src, flow)[0] * weights).sum()
        loss.backward()
        direction = g.normal(size=src.shape)
        direction /= np.linalg.norm(direction)
        eps = 1e-6
        with torch.no_grad():
            d = torch.tensor(direction)
            lp = (flowfield.warp(src + eps * d, flow)[0] * weights).sum().item()
            lm = (flowfield.warp(src - eps * d, flow)[0] * weights).sum().item()
        fd = (lp - lm) / (2 * eps)
        an = (src.grad * torch.tensor(direction)).sum().item()
        assert abs(an - fd) <= 1e-4 * max(1.0, abs(fd))


def test_flow_is_not_differentiated_through():
    src = torch.randn(1, 5, 5, requires_grad=True)
    flow = torch.zeros(2, 5, 5, requires_grad=True)
    out, _ = flowfield.warp(src, flow)
    out.sum().backward()
    assert src.grad is not None
    assert flow.grad is None


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        flowfield.warp(np.zeros((1, 4, 4)), np.zeros((2, 5, 5)))
    with pytest.raises(ValueError):
        flowfield.warp(torch.zeros(2, 1, 4, 4), torch.zeros(2, 4, 4))


# ------------------------------------------------------------ composition


def test_chain_translations_compose():
    rng = np.random.default_rng(2)
    src = rng.normal(size=(1, 9, 9))
    f1 = _const_flow(1.0, 0.0, 9, 9)
    f2 = _const_flow(1.0, 0.0, 9, 9)
    composed, _ = flowfield.chain_flows(f1, f2)
    out_chain, _ = flowfield.warp(src, composed)
    out_direct, _ = flowfield.warp(src, _const_flow(2.0, 0.0, 9, 9))
    assert np.allclose(out_chain[:, :, :7], out_direct[:, :, :7])


# -------------------------------------------------------------- occlusion


def test_occlusion_consistent_translation_visible():
    f = _const_flow(3.0, 0.0, 8, 8)
    m = flowfield.occlusion_mask(f, -f)
    assert np.all(m[:, : 8 - 3] == 1.0)


def test_occlusion_zero_flows_visible():
    z = np.zeros((2, 6, 6))
    assert np.all(flowfield.occlusion_mask(z, z) == 1.0)


def test_occlusion_gross_mismatch_flagged():
    # |f+g|^2 = 100 vs 0.01*100 + 0.5 = 1.5 -> occluded everywhere
    f = _const_flow(10.0, 0.0, 6, 20)
    z = np.zeros((2, 6, 20))
    assert np.all(flowfield.occlusion_mask(f, z) == 0.0)


# ------------------------------------------------------------- synth flow


def test_synth_flow_zero_motion():
    assert np.array_equal(flowfield.synth_flow((0, 0), 4, 4), np.zeros((2, 4, 4)))


def test_synth_flow_translation_sign():
    f = flowfield.synth_flow((2, 0), 5, 5)
    assert np.all(f[0] == -2.0) and np.all(f[1] == 0.0)


def test_synth_flow_warp_identity():
    # content moving right by 2: frame_next(r, c) = frame_prev(r, c-2)
    prev = np.zeros((1, 6, 10))
    prev[0, :, 3] = 7.0
    nxt = np.zeros((1, 6, 10))
    nxt[0, :, 5] = 7.0
    fwd = flowfield.synth_flow((2, 0), 6, 10)
    out, valid = flowfield.warp(prev, fwd)
    assert np.array_equal(out[0][valid == 1.0], nxt[0][valid == 1.0])
    bwd = flowfield.synth_flow((-2, 0), 6, 10)
    back, bvalid = flowfield.warp(nxt, bwd)
    assert np.array_equal(back[0][bvalid == 1.0], prev[0][bvalid == 1.0])


def test_synth_flow_per_object():
    mask = np.zeros((4, 6), dtype=bool)
    mask[1:3, 2:4] = True
    f = flowfield.synth_flow([(mask, (1, -1))], 4, 6)
    assert np.all(f[0][mask] == -1.0) and np.all(f[1][mask] == 1.0)
    assert np.all(f[:, ~mask] == 0.0)


# ------------------------------------------------------------------ files


def test_flo_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(4)
    flow = rng.normal(size=(2, 6, 8)).astype(np.float32)
    path = tmp_path / "f.flo"
    flowfield.write_flo(path, flow)
    back = flowfield.read_flo(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, flow)


def test_flo_2x2_is_44_bytes(tmp_path):
    path = tmp_path / "z.flo"
    flowfield.write_flo(path, np.zeros((2, 2, 2), dtype=np.float32))
    assert path.stat().st_size == 44


def test_flo_bad_magic(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(b"\x00\x00\x00\x00" + b"\x01\x00\x00\x00" * 2)
    with pytest.raises(flowfield.FlowFormatError, match="magic"):
        flowfield.read_flo(path)


def test_flo_truncated_payload(tmp_path):
    path = tmp_path / "short.flo"
    flowfield.write_flo(path, np.zeros((2, 3, 3), dtype=np.float32))
    data = path.read_bytes()
    path.write_bytes(data[:-4])
    with pytest.raises(flowfield.FlowFormatError, match="payload"):
        flowfield.read_flo(path)


def test_flo_bad_dims(tmp_path):
    path = tmp_path / "dims.flo"
    path.write_bytes(flowfield.FLO_MAGIC_BYTES + np.int32(-1).tobytes() + np.int32(2).tobytes())
    with pytest.raises(flowfield.FlowFormatError, match="width"):
        flowfield.read_flo(path)


def test_flow_dir_round_trip(tmp_path):
    flows = np.random.default_rng(1).normal(size=(3, 2, 4, 5)).astype(np.float32)
    flowfield.write_flow_dir(tmp_path / "fw", flows)
    back = flowfield.read_flow_dir(tmp_path / "fw", count=3)
    assert np.array_equal(back, flows)
