"""Command-line interface: colorize, train, evaluate, synth.

All four commands exit 0 on success and 1 with a single ``error:`` line
on stderr otherwise. Configuration files are flat ``key = value`` text
(``#`` comments allowed); unknown keys are rejected rather than ignored
so typos fail loudly.
"""

import argparse
import os
import sys

import torch

from .backbone import build_toy_backbone, train_toy_backbone
from .checkpoint import CheckpointFormatError, load_models, save_models
from .colorspace import normalize, rgb_to_lab
from .flowfield import FlowFormatError
from .fusion import build_fusion
from .pipeline import (
    assemble_rgb,
    ensemble_colorize,
    evaluate_dirs,
    find_flows,
    load_sequence,
    read_color_frames,
    read_gray_frames,
    write_frames,
)
from .srl import TrainConfig, train_tcvc
from .synthetic import generate_synthetic, parse_synth_spec, save_dataset

_TRAIN_KEYS = {
    "iters": int,
    "batch": int,
    "patch": int,
    "interval_len": int,
    "lr0": float,
    "lr_halving_period": int,
    "alpha": float,
    "seed": int,
    "warp_distances": "int_list",
    "backbone_ckpt": str,
    "backbone_seed": int,
    "backbone_pretrain_iters": int,
    "backbone_pretrain_lr": float,
    "fusion_seed": int,
    "loss_csv": str,
}


def parse_config(path):
    """Read a flat ``key = value`` file into a dict of strings."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {raw!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _typed_config(path):
    raw = parse_config(path)
    out = {}
    for key, text in raw.items():
        if key not in _TRAIN_KEYS:
            raise ValueError(f"{path}: unknown config key {key!r}")
        kind = _TRAIN_KEYS[key]
        try:
            if kind == "int_list":
                out[key] = tuple(int(v) for v in text.replace(",", " ").split())
            else:
                out[key] = kind(text)
        except ValueError:
            raise ValueError(f"{path}: bad value for {key}: {text!r}") from None
    return out


def _parse_int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"bad interval list {text!r} (expected e.g. 15,17)") from None


def _cmd_colorize(args):
    backbone, fusion, _ = load_models(args.ckpt)
    lums, names = read_gray_frames(args.frames_dir)
    flows_fw, flows_bw, flow_source = find_flows(
        args.frames_dir, args.flow_dir, count=len(lums)
    )
    ns = _parse_int_list(args.ensemble) if args.ensemble else [args.n]
    maps = ensemble_colorize(lums, backbone, fusion, ns, flows_fw, flows_bw)
    write_frames(args.out, assemble_rgb(lums, maps), names)
    print(
        f"colorized {len(lums)} frames (N={','.join(map(str, ns))}, "
        f"flows: {flow_source}) -> {args.out}"
    )
    return 0


def _pretrain_pairs(sequence_dirs):
    pairs = []
    for d in sequence_dirs:
        color_dir = os.path.join(d, "frames_color")
        if not os.path.isdir(color_dir):
            raise ValueError(
                f"backbone_pretrain_iters needs color frames, {d} has no frames_color"
            )
        frames, _ = read_color_frames(color_dir)
        for frame in frames:
            pairs.append(normalize(rgb_to_lab(frame)))
    return pairs


def _cmd_train(args):
    cfg_values = _typed_config(args.config)
    backbone_ckpt = cfg_values.pop("backbone_ckpt", None)
    backbone_seed = cfg_values.pop("backbone_seed", 0)
    pretrain_iters = cfg_values.pop("backbone_pretrain_iters", 0)
    pretrain_lr = cfg_values.pop("backbone_pretrain_lr", 1e-3)
    fusion_seed = cfg_values.pop("fusion_seed", 0)
    loss_csv = cfg_values.pop("loss_csv", None)
    cfg = TrainConfig(**cfg_values)

    sequences = [load_sequence(d) for d in args.sequence_dirs]
    if backbone_ckpt is not None:
        backbone, _, _ = load_models(backbone_ckpt)
    else:
        backbone = build_toy_backbone(seed=backbone_seed)
        if pretrain_iters > 0:
            _, losses = train_toy_backbone(
                backbone,
                _pretrain_pairs(args.sequence_dirs),
                steps=pretrain_iters,
                lr=pretrain_lr,
                seed=backbone_seed,
            )
            print(f"backbone pretrained {pretrain_iters} steps, final mse {losses[-1]:.6f}")
    fusion = build_fusion(seed=fusion_seed)
    _, curve = train_tcvc(backbone, fusion, sequences, cfg, loss_csv=loss_csv)
    save_models(
        args.out_ckpt,
        backbone,
        fusion,
        meta={"train_iters": cfg.iters, "train_seed": cfg.seed},
    )
    final = f", final loss {curve[-1][1]:.6f}" if curve else ""
    print(
        f"trained fusion for {cfg.iters} iterations on "
        f"{len(sequences)} sequences{final} -> {args.out_ckpt}"
    )
    return 0


def _cmd_evaluate(args):
    report = evaluate_dirs(args.pred_dir, args.gt_dir, args.flow_dir)
    report.to_json(args.report)
    print(report.table())
    print(f"report -> {args.report}")
    return 0


def _cmd_synth(args):
    spec = parse_synth_spec(args.spec_file)
    video = generate_synthetic(spec, seed=args.seed)
    save_dataset(video, args.out)
    print(
        f"rendered {spec.n_frames} frames of {spec.height}x{spec.width} "
        f"({len(spec.objects)} objects, seed {args.seed}) -> {args.out}"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="chromaprop",
        description="Temporally consistent video colorization by feature propagation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("colorize", help="colorize a grayscale frame directory")
    p.add_argument("frames_dir")
    p.add_argument("--ckpt", required=True, help="model checkpoint")
    p.add_argument("--N", type=int, default=17, dest="n", help="interval length")
    p.add_argument("--ensemble", help="comma-separated interval lengths, e.g. 15,17")
    p.add_argument("--flow-dir", help="directory holding flow_fw/ and flow_bw/")
    p.add_argument("--out", required=True, help="output frame directory")
    p.set_defaults(fn=_cmd_colorize)

    p = sub.add_parser("train", help="train the fusion module (no color labels)")
    p.add_argument("sequence_dirs", nargs="+")
    p.add_argument("--config", required=True, help="flat key = value training config")
    p.add_argument("--out-ckpt", required=True, help="checkpoint to write")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--flow-dir", help="flows for warp error (flow_fw/ and flow_bw/)")
    p.add_argument("--report", required=True, help="JSON report path")
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("synth", help="render a synthetic world with oracle flows")
    p.add_argument("spec_file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.set_defaults(fn=_cmd_synth)
    return parser


def main(argv=None):
    torch.set_num_threads(1)  # keep runs reproducible across machines
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError, CheckpointFormatError, FlowFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
