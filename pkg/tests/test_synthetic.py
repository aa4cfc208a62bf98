import numpy as np
import pytest
from PIL import Image

from chromaprop.colorspace import normalize, rgb_to_lab
from chromaprop.flowfield import occlusion_mask, read_flow_dir, warp
from chromaprop.synthetic import (
    SynthObject,
    SynthSpec,
    generate_synthetic,
    oracle_flows,
    parse_synth_spec,
    render_frames,
    save_dataset,
)


def _two_object_spec(n_frames=6, flicker=0.0, noise=0.0):
    return SynthSpec(
        height=24,
        width=24,
        n_frames=n_frames,
        background=(40, 90, 140),
        objects=[
            SynthObject(2, 3, 5, 4, (220, 50, 30), velocity=(2, 1)),
            SynthObject(14, 16, 4, 5, (30, 200, 60), velocity=(-1, -2)),
        ],
        lum_flicker_sigma=flicker,
        lum_noise_sigma=noise,
    )


def test_zero_motion_world_is_static():
    spec = SynthSpec(
        height=8, width=8, n_frames=4,
        objects=[SynthObject(1, 1, 3, 3, (200, 10, 10))],
    )
    video = generate_synthetic(spec)
    assert (video.flows_fw == 0).all() and (video.flows_bw == 0).all()
    for t in range(1, 4):
        np.testing.assert_array_equal(video.color[t], video.color[0])
        np.testing.assert_array_equal(video.gray[t], video.gray[0])


def test_single_object_flow_values():
    spec = SynthSpec(
        height=10, width=12, n_frames=3,
        objects=[SynthObject(2, 4, 3, 2, (250, 250, 10), velocity=(1, 0))],
    )
    flows_fw, flows_bw = oracle_flows(spec)
    support_t1 = spec.objects[0].support(1, 10, 12)
    # dst-grid convention: content moving +1 in x carries field -1 there
    assert (flows_fw[0][0][support_t1] == -1).all()
    assert (flows_fw[0][1][support_t1] == 0).all()
    assert (flows_fw[0][0][~support_t1] == 0).all()
    support_t0 = spec.objects[0].support(0, 10, 12)
    assert (flows_bw[0][0][support_t0] == 1).all()
    assert (flows_bw[0][1][support_t0] == 0).all()


def test_same_seed_bit_identical():
    spec = _two_object_spec(flicker=0.05, noise=0.01)
    a = generate_synthetic(spec, seed=7)
    b = generate_synthetic(spec, seed=7)
    for fld in ("color", "gray", "flows_fw", "flows_bw", "chroma_gt"):
        np.testing.assert_array_equal(getattr(a, fld), getattr(b, fld))
    c = generate_synthetic(spec, seed=8)
    assert not np.array_equal(a.gray, c.gray)


def test_exact_warp_identity_both_directions():
    video = generate_synthetic(_two_object_spec())
    n = len(video.color)
    for i in range(n - 1):
        # backward: pull frame i+1 onto frame i's grid
        src = np.moveaxis(video.color[i + 1].astype(np.float64), -1, 0)
        warped, valid = warp(src, video.flows_bw[i])
        occ = occlusion_mask(video.flows_bw[i], video.flows_fw[i])
        m = (valid * occ) == 1.0
        ref = np.moveaxis(video.color[i].astype(np.float64), -1, 0)
        assert m.sum() > 0.5 * m.size
        np.testing.assert_array_equal(warped[:, m], ref[:, m])
        # forward: pull frame i onto frame i+1's grid
        src = np.moveaxis(video.color[i].astype(np.float64), -1, 0)
        warped, valid = warp(src, video.flows_fw[i])
        occ = occlusion_mask(video.flows_fw[i], video.flows_bw[i])
        m = (valid * occ) == 1.0
        ref = np.moveaxis(video.color[i + 1].astype(np.float64), -1, 0)
        np.testing.assert_array_equal(warped[:, m], ref[:, m])


def test_gray_is_lab_lightness_when_clean():
    video = generate_synthetic(_two_object_spec())
    for t in range(len(video.color)):
        lum, chroma = normalize(rgb_to_lab(video.color[t]))
        np.testing.assert_array_equal(video.gray[t], lum.astype(np.float32))
        np.testing.assert_array_equal(video.chroma_gt[t], chroma.astype(np.float32))
    assert video.gray.min() >= 0.0 and video.gray.max() <= 1.0


def test_flicker_corrupts_gray_but_not_color():
    spec = _two_object_spec(flicker=0.05)
    video = generate_synthetic(spec, seed=3)
    clean = generate_synthetic(_two_object_spec(), seed=3)
    np.testing.assert_array_equal(video.color, clean.color)
    assert not np.array_equal(video.gray[0], video.gray[1] )
    # flicker is a per-frame scalar: frame-to-frame difference is constant
    # wherever the underlying content is static
    static = (clean.gray[0] == clean.gray[1])
    diffs = video.gray[1][static] - video.gray[0][static]
    clipped = (video.gray[1][static] <= 0) | (video.gray[1][static] >= 1)
    assert np.allclose(diffs[~clipped], diffs[~clipped][0], atol=1e-6)


def test_in_canvas_invariant_enforced():
    with pytest.raises(ValueError, match="leaves the canvas"):
        SynthSpec(
            height=8, width=8, n_frames=6,
            objects=[SynthObject(0, 0, 2, 2, (1, 2, 3), velocity=(2, 0))],
        )


def test_object_validation():
    with pytest.raises(ValueError, match="integer"):
        SynthObject(0.5, 0, 2, 2, (1, 2, 3))
    with pytest.raises(ValueError, match="integral"):
        SynthObject(0, 0, 2, 2, (1, 2, 3), velocity=(0.5, 0))
    with pytest.raises(ValueError, match="color"):
        SynthObject(0, 0, 2, 2, (300, 0, 0))
    with pytest.raises(ValueError, match="size"):
        SynthObject(0, 0, 0, 2, (1, 2, 3))


def test_save_dataset_layout_and_round_trip(tmp_path):
    video = generate_synthetic(_two_object_spec(n_frames=4), seed=1)
    save_dataset(video, tmp_path)
    for sub in ("frames_color", "frames_gray", "flow_fw", "flow_bw"):
        assert (tmp_path / sub).is_dir()
    color_files = sorted((tmp_path / "frames_color").iterdir())
    assert [f.name for f in color_files] == [f"{i:05d}.png" for i in range(1, 5)]
    loaded = np.asarray(Image.open(color_files[0]))
    np.testing.assert_array_equal(loaded, video.color[0])
    gray = np.asarray(Image.open(tmp_path / "frames_gray" / "00001.png"))
    np.testing.assert_array_equal(gray, np.rint(video.gray[0] * 255).astype(np.uint8))
    flows = read_flow_dir(tmp_path / "flow_bw")
    np.testing.assert_array_equal(flows, video.flows_bw)
    assert len(read_flow_dir(tmp_path / "flow_fw")) == 3


def test_parse_synth_spec(tmp_path):
    path = tmp_path / "world.txt"
    path.write_text(
        "# a small world\n"
        "canvas = 16x20\n"
        "frames = 5\n"
        "background = 10, 20, 30\n"
        "flicker = 0.02\n"
        "object = 1 2 3 4 200 100 50 1 0\n"
        "object = 8, 9, 2, 2, 5, 250, 5, 0, -1\n"
    )
    spec = parse_synth_spec(path)
    assert (spec.height, spec.width, spec.n_frames) == (16, 20, 5)
    assert spec.background == (10, 20, 30)
    assert spec.lum_flicker_sigma == 0.02
    assert len(spec.objects) == 2
    assert spec.objects[1].velocity == (0, -1)
    render_frames(spec)  # parses into a renderable world


def test_parse_synth_spec_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("canvas = 8x8\nframes = 3\nobject = 1 2 3\n")
    with pytest.raises(ValueError, match="bad.txt:3"):
        parse_synth_spec(bad)
    nokey = tmp_path / "nokey.txt"
    nokey.write_text("canvas 8x8\n")
    with pytest.raises(ValueError, match="key = value"):
        parse_synth_spec(nokey)
    missing = tmp_path / "missing.txt"
    missing.write_text("frames = 3\n")
    with pytest.raises(ValueError, match="missing"):
        parse_synth_spec(missing)
    unknown = tmp_path / "unknown.txt"
    unknown.write_text("canvas = 8x8\nframes = 3\nwobble = 1\n")
    with pytest.raises(ValueError, match="unknown key"):
        parse_synth_spec(unknown)
