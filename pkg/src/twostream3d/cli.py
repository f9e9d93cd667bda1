"""Command-line entry point for the two-stream pipeline.

Commands:

    synth      generate the synthetic labeled video corpus
    flow       convert a video dataset into flow-image videos
    train      train one stream (ir or flow) on a dataset
    eval       evaluate a checkpoint; writes metrics and prediction files
    fuse       combine two streams' prediction files (late1/late2/nn1/nn2)
    gradcheck  finite-difference check of all analytic gradients
    viz        gradient-ascent visualization of code neurons

Options resolve with precedence flags > config file > profile defaults.
Config files are flat ``key=value`` lines (``#`` comments allowed). Every
run writes ``effective_config.txt`` into the output directory; re-running
the same command with ``--config`` pointing at that dump reproduces the
outputs bit-for-bit (same thread count).

``--threads`` caps BLAS worker threads; it must take effect before numpy
loads, which is why this module defers all heavy imports into the
command bodies.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

PROFILES = {
    "tiny": {
        "spec": "C(3,8,1)-P(1,2,1,2)-C(3,12,1)-P(2,2,2,2)-FC(48)-SM(6)-DC(24)",
        "classes": 6,
        "frame_h": 24,
        "frame_w": 32,
        "crop_h": 20,
        "crop_w": 28,
        "clip_len": 8,
        "frames_per_video": 17,
        "videos_per_class": 50,
        "train_per_class": 30,
    },
    "full": {
        "spec": (
            "C(3,64,1)-P(1,2,1,2)-C(3,128,1)-P(2,2,2,2)-C(3,256,1)-C(3,256,1)-P(2,2,2,2)-"
            "C(3,512,1)-C(3,512,1)-P(2,2,2,2)-C(3,512,1)-C(3,512,1)-P(2,2,2,2)-"
            "FC(4096)-FC(4096)-SM(12)-DC(4096)"
        ),
        "classes": 12,
        "frame_h": 128,
        "frame_w": 171,
        "crop_h": 112,
        "crop_w": 112,
        "clip_len": 16,
        "frames_per_video": 33,
        "videos_per_class": 50,
        "train_per_class": 30,
    },
}

GRADCHECK_SPEC = "C(3,4,1)-P(1,2,1,2)-C(3,6,1)-P(2,2,2,2)-FC(16)-SM(3)-DC(9)"
GRADCHECK_SHAPE = (3, 4, 8, 8)

_DEFAULTS = {
    "profile": "tiny",
    "seed": 0,
    "threads": 0,
    "alpha": 0.02,
    "lr": 0.0001,
    "batch": 30,
    "wd": 0.0005,
    "iters": 10000,
    "momentum": 0.0,
    "knn_k": 5,
    "gamma": 0.05,
    "w_ir": 1.0,
    "w_flow": 2.0,
    "nn_hidden": 50,
    "noise": 0.02,
    "tolerance": 1e-4,
    "steps": 200,
    "step_size": 1.0,
    "l2_decay": 0.0001,
    "ppm": 0,
    "stream": "",
    "method": "",
    "neuron": 0,
    "data": "",
    "ckpt": "",
    "ir": "",
    "flow": "",
    "videos_per_class": 0,  # 0 = profile default
    "frames_per_video": 0,
    "train_per_class": 0,
}

_INT_KEYS = {
    "seed", "threads", "batch", "iters", "knn_k", "nn_hidden", "ppm", "neuron",
    "steps", "videos_per_class", "frames_per_video", "train_per_class",
}
_FLOAT_KEYS = {
    "alpha", "lr", "wd", "momentum", "gamma", "w_ir", "w_flow", "noise",
    "tolerance", "step_size", "l2_decay",
}


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def resolve_options(args) -> dict:
    """Merge defaults, config file, and flags into one options dict."""
    opts = dict(_DEFAULTS)
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key not in opts:
                raise ValueError(f"unknown config key {key!r}")
            opts[key] = raw
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            opts[key] = flag
    for key in _INT_KEYS:
        opts[key] = int(opts[key])
    for key in _FLOAT_KEYS:
        opts[key] = float(opts[key])

    profile = PROFILES[opts["profile"]]
    for key in ("videos_per_class", "frames_per_video", "train_per_class"):
        if opts[key] == 0:
            opts[key] = profile[key]
    return opts


def write_effective_config(out_dir: Path, command: str, opts: dict) -> None:
    lines = [f"# command: {command}"]
    for key in sorted(opts):
        lines.append(f"{key}={opts[key]}")
    (out_dir / "effective_config.txt").write_text("\n".join(lines) + "\n")
    print(f"effective config written to {out_dir / 'effective_config.txt'}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands (heavy imports stay inside the bodies)
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    from .data import SyntheticSpec, generate_synthetic, save_dataset

    opts = resolve_options(args)
    profile = PROFILES[opts["profile"]]
    out = _out_dir(args)
    spec = SyntheticSpec(
        classes=profile["classes"],
        frame_hw=(profile["frame_h"], profile["frame_w"]),
        frames_per_video=opts["frames_per_video"],
        videos_per_class=opts["videos_per_class"],
        noise=opts["noise"],
        seed=opts["seed"],
    )
    videos = generate_synthetic(spec)
    save_dataset(videos, out / "dataset")
    write_effective_config(out, "synth", opts)
    print(f"wrote {len(videos)} videos under {out / 'dataset'}")
    return 0


def cmd_flow(args) -> int:
    import numpy as np

    from .data import VideoRecord, load_dataset, save_dataset
    from .flow import video_to_flow_clip
    from .images import write_ppm

    opts = resolve_options(args)
    if not opts["data"]:
        raise ValueError("flow conversion needs --data pointing at a video dataset")
    out = _out_dir(args)
    videos = load_dataset(opts["data"])
    converted = []
    for vid in videos:
        clip = video_to_flow_clip(vid.frames)  # (3, f-1, h, w)
        converted.append(VideoRecord(clip.transpose(1, 0, 2, 3).copy(), vid.label, vid.id))
    save_dataset(converted, out / "dataset")
    if opts["ppm"] > 0:
        ppm_dir = out / "ppm"
        ppm_dir.mkdir(exist_ok=True)
        for vid in converted[: opts["ppm"]]:
            img = np.clip(np.rint(vid.frames[0] * 255.0), 0, 255).astype(np.uint8)
            write_ppm(ppm_dir / f"{vid.id}_flow0.ppm", img)
    write_effective_config(out, "flow", opts)
    print(f"converted {len(converted)} videos to flow under {out / 'dataset'}")
    return 0


def _stream_config(opts):
    from .training import TrainConfig

    return TrainConfig(
        learning_rate=opts["lr"],
        batch_size=opts["batch"],
        weight_decay=opts["wd"],
        max_iterations=opts["iters"],
        momentum=opts["momentum"],
        seed=opts["seed"],
        alpha=opts["alpha"],
    )


def cmd_train(args) -> int:
    from .data import ClipDataset, load_dataset, train_test_split
    from .network import Network
    from .training import save_checkpoint, train, write_history

    opts = resolve_options(args)
    if opts["stream"] not in ("ir", "flow"):
        raise ValueError("--stream must be 'ir' or 'flow'")
    if not opts["data"]:
        raise ValueError("training needs --data pointing at a dataset")
    profile = PROFILES[opts["profile"]]
    out = _out_dir(args)

    videos = load_dataset(opts["data"])
    train_videos, _ = train_test_split(videos, opts["train_per_class"], opts["seed"])
    dataset = ClipDataset.from_videos(
        train_videos, profile["clip_len"], crop_hw=(profile["crop_h"], profile["crop_w"])
    )
    net = Network.build(
        profile["spec"],
        (3, profile["clip_len"], profile["crop_h"], profile["crop_w"]),
        seed=opts["seed"],
    )
    cfg = _stream_config(opts)
    result = train(net, dataset, cfg)
    save_checkpoint(out / f"{opts['stream']}_net.ckpt", net, iteration=len(result.history))
    write_history(out / f"{opts['stream']}_history.csv", result.history)
    write_effective_config(out, "train", opts)
    final = result.history[-1].total if result.history else float("nan")
    print(f"trained {opts['stream']} stream for {len(result.history)} iterations, final loss {final:.4f}")
    return 0


def _save_predictions(out: Path, outputs) -> None:
    from .tensor import save_tensor

    pred = out / "predictions"
    pred.mkdir(parents=True, exist_ok=True)
    import numpy as np

    save_tensor(pred / "train_codes.t3d", outputs.train_codes.astype(np.float32))
    save_tensor(pred / "test_codes.t3d", outputs.test_codes.astype(np.float32))
    save_tensor(pred / "train_probs.t3d", outputs.train_probs.astype(np.float32))
    save_tensor(pred / "test_probs.t3d", outputs.test_probs.astype(np.float32))
    save_tensor(pred / "train_labels.t3d", outputs.train_labels.astype(np.float64))
    save_tensor(pred / "test_labels.t3d", outputs.test_labels.astype(np.float64))
    meta = {
        "classes": outputs.classes,
        "train_ids": outputs.train_ids,
        "test_ids": outputs.test_ids,
    }
    (pred / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def _load_predictions(root):
    import numpy as np

    from .fusion import StreamOutputs
    from .tensor import load_tensor

    root = Path(root)
    pred = root / "predictions" if (root / "predictions").exists() else root
    meta = json.loads((pred / "meta.json").read_text())
    return StreamOutputs(
        train_codes=load_tensor(pred / "train_codes.t3d"),
        train_probs=load_tensor(pred / "train_probs.t3d"),
        train_labels=load_tensor(pred / "train_labels.t3d").astype(np.int64),
        test_codes=load_tensor(pred / "test_codes.t3d"),
        test_probs=load_tensor(pred / "test_probs.t3d"),
        test_labels=load_tensor(pred / "test_labels.t3d").astype(np.int64),
        train_ids=meta["train_ids"],
        test_ids=meta["test_ids"],
        classes=meta["classes"],
    )


def cmd_eval(args) -> int:
    from .data import load_dataset, train_test_split
    from .fusion import (
        FusionConfig,
        classify_stream,
        code_matrix_image,
        evaluate_stream,
        metrics,
        save_confusion_csv,
        save_metrics_json,
    )
    from .images import write_pgm
    from .training import load_checkpoint

    opts = resolve_options(args)
    if not opts["ckpt"] or not opts["data"]:
        raise ValueError("eval needs --ckpt and --data")
    profile = PROFILES[opts["profile"]]
    out = _out_dir(args)

    net, _ = load_checkpoint(opts["ckpt"])
    videos = load_dataset(opts["data"])
    train_videos, test_videos = train_test_split(videos, opts["train_per_class"], opts["seed"])
    outputs = evaluate_stream(
        net, train_videos, test_videos, profile["clip_len"], (profile["crop_h"], profile["crop_w"])
    )
    _save_predictions(out, outputs)

    fcfg = FusionConfig(knn_k=opts["knn_k"], gamma=opts["gamma"], nn_hidden=opts["nn_hidden"])
    for method in ("softmax", "knn", "kernel"):
        preds = classify_stream(outputs, method, fcfg)
        report = metrics(preds, outputs.test_labels, outputs.classes)
        save_metrics_json(out / f"metrics_{method}.json", report)
        save_confusion_csv(out / f"confusion_{method}.csv", report)
        print(f"{method:8s} AP {report.ap * 100:.2f}%")
    write_pgm(out / "code_matrix.pgm", code_matrix_image(outputs.test_codes, outputs.test_labels))
    write_effective_config(out, "eval", opts)
    return 0


def cmd_fuse(args) -> int:
    import numpy as np

    from .fusion import (
        FusionConfig,
        FusionHead,
        code_to_probs,
        fuse_weighted,
        metrics,
        save_confusion_csv,
        save_metrics_json,
    )

    opts = resolve_options(args)
    if opts["method"] not in ("late1", "late2", "nn1", "nn2"):
        raise ValueError("--method must be one of late1, late2, nn1, nn2")
    if not opts["ir"] or not opts["flow"]:
        raise ValueError("fusion needs --ir and --flow prediction directories")
    out = _out_dir(args)
    ir = _load_predictions(opts["ir"])
    flow = _load_predictions(opts["flow"])
    if ir.test_ids != flow.test_ids or ir.train_ids != flow.train_ids:
        raise ValueError("streams are misaligned: prediction files cover different videos")
    if not np.array_equal(ir.test_labels, flow.test_labels):
        raise ValueError("streams are misaligned: test labels differ")

    fcfg = FusionConfig(
        w_ir=opts["w_ir"], w_flow=opts["w_flow"], knn_k=opts["knn_k"],
        gamma=opts["gamma"], nn_hidden=opts["nn_hidden"],
    )
    method = opts["method"]
    if method == "late1":
        fused = fuse_weighted(ir.test_probs, flow.test_probs, fcfg.w_ir, fcfg.w_flow)
        preds = fused.argmax(axis=1)
    elif method == "late2":
        p_ir = np.stack([
            code_to_probs(c, ir.train_codes, ir.train_labels, fcfg.knn_k, fcfg.gamma)
            for c in ir.test_codes
        ])
        p_flow = np.stack([
            code_to_probs(c, flow.train_codes, flow.train_labels, fcfg.knn_k, fcfg.gamma)
            for c in flow.test_codes
        ])
        fused = fuse_weighted(p_ir, p_flow, fcfg.w_ir, fcfg.w_flow)
        preds = fused.argmax(axis=1)
    else:
        train_cat = np.concatenate([ir.train_codes, flow.train_codes], axis=1)
        test_cat = np.concatenate([ir.test_codes, flow.test_codes], axis=1)
        hidden = fcfg.nn_hidden if method == "nn2" else None
        head = FusionHead.build(train_cat.shape[1], ir.classes, hidden=hidden, seed=opts["seed"])
        head.fit(train_cat, ir.train_labels, _stream_config(opts))
        preds = head.predict_probs(test_cat).argmax(axis=1)

    report = metrics(preds, ir.test_labels, ir.classes)
    save_metrics_json(out / f"metrics_{method}.json", report)
    save_confusion_csv(out / f"confusion_{method}.csv", report)
    write_effective_config(out, "fuse", opts)
    print(f"{method} AP {report.ap * 100:.2f}%")
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    from .network import Network
    from .training import gradcheck

    opts = resolve_options(args)
    out = _out_dir(args)
    net = Network.build(GRADCHECK_SPEC, GRADCHECK_SHAPE, seed=opts["seed"], dtype=np.float64)
    rng = np.random.default_rng([opts["seed"], 0xBA7C4])
    clips = rng.normal(0.45, 0.2, size=(4, *GRADCHECK_SHAPE))
    labels = rng.integers(0, net.spec.classes, size=4)
    report = gradcheck(net, clips, labels, alpha=opts["alpha"], tolerance=opts["tolerance"], seed=opts["seed"])
    (out / "gradcheck.txt").write_text(report.format() + "\n")
    write_effective_config(out, "gradcheck", opts)
    print(report.format())
    return 0 if report.passed else 1


def cmd_viz(args) -> int:
    from .training import load_checkpoint
    from .viz import VizConfig, visualize_neuron, write_viz_outputs

    opts = resolve_options(args)
    if not opts["ckpt"]:
        raise ValueError("viz needs --ckpt")
    out = _out_dir(args)
    net, _ = load_checkpoint(opts["ckpt"])
    profile = PROFILES[opts["profile"]]
    cfg = VizConfig(
        neuron=opts["neuron"],
        steps=opts["steps"],
        step_size=opts["step_size"],
        l2_decay=opts["l2_decay"],
        seed=opts["seed"],
        input_shape=(3, profile["clip_len"], profile["crop_h"], profile["crop_w"]),
    )
    result = visualize_neuron(net, cfg)
    dest = write_viz_outputs(out, result, opts["neuron"])
    write_effective_config(out, "viz", opts)
    print(
        f"neuron {opts['neuron']}: activation {result.activations[0]:.4f} -> "
        f"{result.activations[-1]:.4f}, frames under {dest}"
    )
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="twostream3d",
        description="Two-stream 3D convnet pipeline: synthetic data, flow, training, fusion.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None, help="cap BLAS threads")
        p.add_argument("--profile", choices=sorted(PROFILES), default=None)

    p = sub.add_parser("synth", help="generate the synthetic video corpus")
    common(p)
    p.add_argument("--videos-per-class", dest="videos_per_class", type=int, default=None)
    p.add_argument("--frames-per-video", dest="frames_per_video", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("flow", help="convert videos to optical-flow videos")
    common(p)
    p.add_argument("--data", default=None, help="source video dataset directory")
    p.add_argument("--ppm", type=int, default=None, help="dump N sample flow images as PPM")
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("train", help="train one stream")
    common(p)
    p.add_argument("--stream", choices=("ir", "flow"), default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--wd", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--train-per-class", dest="train_per_class", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, write predictions + metrics")
    common(p)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--knn-k", dest="knn_k", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--train-per-class", dest="train_per_class", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fuse", help="fuse two streams' prediction files")
    common(p)
    p.add_argument("--method", choices=("late1", "late2", "nn1", "nn2"), default=None)
    p.add_argument("--ir", default=None, help="ir-stream eval output directory")
    p.add_argument("--flow", default=None, help="flow-stream eval output directory")
    p.add_argument("--knn-k", dest="knn_k", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--w-ir", dest="w_ir", type=float, default=None)
    p.add_argument("--w-flow", dest="w_flow", type=float, default=None)
    p.add_argument("--nn-hidden", dest="nn_hidden", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    common(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--tolerance", type=float, default=None)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("viz", help="gradient-ascent neuron visualization")
    common(p)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--neuron", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--step-size", dest="step_size", type=float, default=None)
    p.add_argument("--l2-decay", dest="l2_decay", type=float, default=None)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = getattr(args, "threads", None)
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
