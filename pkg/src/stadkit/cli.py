"""Command-line entry point: gen-data, train, eval, bench, assign-debug.

Exit codes: 0 success, 2 configuration/usage error, 3 numerical failure.
Every run echoes its fully resolved configuration to
``<out>/config.resolved.json`` so results are reproducible from the
artifacts alone.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .assignment import assign_plus, assign_yowo_baseline
from .bench import bench_fps
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config, parse_anchors, write_resolved
from .datasets import generate_dataset, load_dataset
from .detector import ActionDetector
from .exceptions import ConfigError, NumericalDivergenceError
from .metrics import (
    build_pred_tubes,
    gt_tubes,
    per_class_frame_ap,
    per_class_video_ap,
)
from .model import forward, init_head
from .postprocess import Detection

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _guarded(fn):
    """Map domain exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NumericalDivergenceError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except ConfigError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="stadkit")
def main():
    """Spatio-temporal action detection toolkit (synthetic toy scale)."""


def _dump_json(path, payload):
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _detector_from_config(cfg, assigner=None, box_loss=None, seed=None):
    model, loss, train = cfg["model"], cfg["loss"], cfg["train"]
    return ActionDetector(
        grid_size=model["grid_size"],
        stride=model["stride"],
        anchors=model["anchors"],
        num_classes=cfg["data"]["num_classes"],
        clip_length=cfg["data"]["clip_length"],
        assigner=assigner or train["assigner"],
        box_loss=box_loss or loss["box_loss"],
        conf_target=loss["conf_target"],
        lambda_act=loss["lambda_act"],
        lambda_noact=loss["lambda_noact"],
        lambda_cls=loss["lambda_cls"],
        lambda_coord=loss["lambda_coord"],
        focal_gamma=loss["focal_gamma"],
        focal_alpha=loss["focal_alpha"],
        smooth_l1_beta=loss["smooth_l1_beta"],
        lr=train["lr"],
        weight_decay=train["weight_decay"],
        beta1=train["beta1"],
        beta2=train["beta2"],
        eps=train["eps"],
        batch_size=train["batch_size"],
        epochs=train["epochs"],
        milestones=train["milestones"],
        lr_decay_factor=train["lr_decay_factor"],
        head_init_scale=model["head_init_scale"],
        seed=seed if seed is not None else train["seed"],
        conf_threshold=cfg["postprocess"]["conf_threshold"],
        nms_iou=cfg["postprocess"]["nms_iou"],
    )


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="INI configuration file.")
@click.option("--out", "out_dir", type=click.Path(), required=True,
              help="Output directory for the dataset.")
@click.option("--seed", type=int, default=None, help="Override [data] seed.")
@_guarded
def gen_data(config_path, out_dir, seed):
    """Generate the synthetic clip dataset."""
    overrides = {}
    if seed is not None:
        overrides[("data", "seed")] = seed
    cfg = load_config(config_path, overrides)
    data = cfg["data"]
    manifest = generate_dataset(
        out_dir,
        seed=data["seed"],
        n_train=data["n_train_videos"],
        n_eval=data["n_eval_videos"],
        n_frames=data["clip_length"],
        num_classes=data["num_classes"],
        image_size=data["image_size"],
        motion_profile=data["motion_profile"],
    )
    write_resolved(cfg, out_dir)
    click.echo(
        f"wrote {len(manifest.clips)} clips "
        f"({data['n_train_videos']} train / {data['n_eval_videos']} eval) to {out_dir}"
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--data", "data_dir", type=click.Path(), required=True,
              help="Dataset directory from gen-data.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--assigner", type=click.Choice(["plus", "yowo"]), default=None,
              help="Label assignment scheme (overrides config).")
@click.option("--box-loss", type=click.Choice(["giou", "smooth_l1"]), default=None,
              help="Box regression term (overrides config).")
@click.option("--seed", type=int, default=None, help="Override [train] seed.")
@_guarded
def train(config_path, data_dir, out_dir, assigner, box_loss, seed):
    """Train the detector head on the train split."""
    overrides = {}
    if assigner is not None:
        overrides[("train", "assigner")] = assigner
    if box_loss is not None:
        overrides[("loss", "box_loss")] = box_loss
    if seed is not None:
        overrides[("train", "seed")] = seed
    cfg = load_config(config_path, overrides)

    manifest, clips = load_dataset(data_dir, split="train")
    if manifest.num_classes != cfg["data"]["num_classes"]:
        raise ConfigError(
            f"dataset has {manifest.num_classes} classes but config expects "
            f"{cfg['data']['num_classes']}"
        )
    if not clips:
        raise ConfigError(f"no train-split clips under {data_dir}")

    est = _detector_from_config(cfg)
    try:
        est.fit(clips)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    with (out / "train.log.jsonl").open("w") as fh:
        for entry in est.history_:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    save_checkpoint(
        out / "checkpoint.bin", cfg, est.head_, est.optimizer_state_,
        seed=cfg["train"]["seed"],
        extra={"n_steps": est.n_steps_, "n_train_clips": len(clips)},
    )

    first, last = est.history_[0], est.history_[-1]
    mean_ppg = float(np.mean([e["positives_per_gt"] for e in est.history_]))
    click.echo(f"trained {est.n_steps_} steps on {len(clips)} clips")
    click.echo(f"loss: {first['total']:.4f} (first step) -> {last['total']:.4f} (last step)")
    click.echo(f"mean positives per ground truth: {mean_ppg:.3f}")
    click.echo(f"checkpoint: {out / 'checkpoint.bin'}")


def _oracle_detections(clips):
    dets = []
    for clip in clips:
        for frame_gts in clip.frames:
            for gt in frame_gts:
                for cid in gt.class_ids():
                    dets.append(
                        Detection(
                            box=np.asarray(gt.box), class_id=cid, score=1.0,
                            frame_index=gt.frame_index, video_id=gt.video_id,
                        )
                    )
    return dets


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(), default=None,
              help="Trained checkpoint (omit only with --debug-oracle).")
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--metric", type=click.Choice(["frame-map", "video-map", "both"]),
              default="both", show_default=True)
@click.option("--iou-threshold", type=float, default=None,
              help="Frame-AP box IoU threshold (overrides config).")
@click.option("--video-iou-threshold", type=float, default=None,
              help="Tube IoU threshold (overrides config).")
@click.option("--split", default="eval", show_default=True)
@click.option("--debug-oracle", type=click.Choice(["perfect", "empty"]), default=None,
              help="Bypass the model: feed ground truth (perfect) or nothing (empty).")
@_guarded
def eval_cmd(ckpt_path, data_dir, out_dir, metric, iou_threshold, video_iou_threshold,
             split, debug_oracle):
    """Evaluate a checkpoint (or a debug oracle) on a dataset split."""
    if ckpt_path is None and debug_oracle is None:
        raise ConfigError("eval needs --checkpoint or --debug-oracle")

    if ckpt_path is not None:
        cfg, head, _, _ = load_checkpoint(ckpt_path)
    else:
        cfg = load_config(None)
        head = None

    overrides = {}
    if iou_threshold is not None:
        overrides[("eval", "frame_iou_threshold")] = iou_threshold
    if video_iou_threshold is not None:
        overrides[("eval", "video_iou_threshold")] = video_iou_threshold
    for key, value in overrides.items():
        cfg[key[0]][key[1]] = value

    manifest, clips = load_dataset(data_dir, split=split)
    if manifest.num_classes != cfg["data"]["num_classes"]:
        raise ConfigError(
            f"checkpoint/config mismatch: dataset has {manifest.num_classes} classes, "
            f"checkpoint expects {cfg['data']['num_classes']}"
        )
    if int(manifest.params["image_size"]) != cfg["data"]["image_size"]:
        raise ConfigError(
            f"checkpoint/config mismatch: dataset image_size {manifest.params['image_size']}, "
            f"checkpoint expects {cfg['data']['image_size']}"
        )
    if not clips:
        raise ConfigError(f"no {split}-split clips under {data_dir}")

    if debug_oracle == "perfect":
        detections = _oracle_detections(clips)
    elif debug_oracle == "empty":
        detections = []
    else:
        est = _detector_from_config(cfg)
        est.anchors_ = parse_anchors(cfg["model"]["anchors"])
        est.head_ = head
        detections = est.predict(clips)

    gts = []
    for clip in clips:
        gts.extend(clip.all_ground_truths())
    classes = list(range(manifest.num_classes))
    ev = cfg["eval"]

    results = {
        "tool_version": __version__,
        "config": cfg,
        "split": split,
        "n_clips": len(clips),
        "n_detections": len(detections),
        "n_ground_truths": len(gts),
        "interpolation": ev["interpolation"],
        "debug_oracle": debug_oracle,
    }
    lines = []
    if metric in ("frame-map", "both"):
        curves = per_class_frame_ap(detections, gts, classes, ev["frame_iou_threshold"])
        aps = [c.ap for c in curves.values() if c.n_gt > 0]
        fmap = float(np.mean(aps)) if aps else 0.0
        results["frame_iou_threshold"] = ev["frame_iou_threshold"]
        results["frame_ap"] = {
            str(cid): {"ap": c.ap, "n_gt": c.n_gt} for cid, c in curves.items()
        }
        results["frame_map"] = fmap
        lines.append(("frame mAP", ev["frame_iou_threshold"], fmap))
    if metric in ("video-map", "both"):
        truth = gt_tubes(gts)
        pred = build_pred_tubes(detections, ev["link_iou"], ev["max_gap"])
        vcurves = per_class_video_ap(pred, truth, classes, ev["video_iou_threshold"])
        vaps = [c.ap for c in vcurves.values() if c.n_gt > 0]
        vmap = float(np.mean(vaps)) if vaps else 0.0
        results["video_iou_threshold"] = ev["video_iou_threshold"]
        results["link_iou"] = ev["link_iou"]
        results["max_gap"] = ev["max_gap"]
        results["video_ap"] = {
            str(cid): {"ap": c.ap, "n_gt": c.n_gt} for cid, c in vcurves.items()
        }
        results["video_map"] = vmap
        results["n_pred_tubes"] = len(pred)
        results["n_gt_tubes"] = len(truth)
        lines.append(("video mAP", ev["video_iou_threshold"], vmap))

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg, out)
    _dump_json(out / "results.json", results)

    click.echo(f"{'metric':<12} {'IoU':>5} {'value':>8}")
    for name, thr, value in lines:
        click.echo(f"{name:<12} {thr:>5.2f} {value:>8.4f}")
    click.echo(f"results: {out / 'results.json'}")


@main.command()
@click.option("--checkpoint", "ckpt_path", type=click.Path(), required=True)
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--iters", type=int, default=5, show_default=True)
@click.option("--warmup", type=int, default=1, show_default=True)
@click.option("--split", default="eval", show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default=None,
              help="Also write bench.json under this directory.")
@_guarded
def bench(ckpt_path, data_dir, iters, warmup, split, out_dir):
    """Measure inference frames per second."""
    cfg, head, _, _ = load_checkpoint(ckpt_path)
    manifest, clips = load_dataset(data_dir, split=split)
    if not clips:
        raise ConfigError(f"no {split}-split clips under {data_dir}")
    est = _detector_from_config(cfg)
    est.anchors_ = parse_anchors(cfg["model"]["anchors"])
    est.head_ = head

    try:
        report = bench_fps(est.predict, clips, warmup=warmup, iters=iters)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report["config"] = cfg
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, out)
        _dump_json(out / "bench.json", report)
        click.echo(f"report: {out / 'bench.json'}")
    click.echo(f"median fps: {report['median_fps']:.1f}  mean fps: {report['mean_fps']:.1f} "
               f"({report['n_frames']} frames x {iters} iters)")


@main.command("assign-debug")
@click.option("--data", "data_dir", type=click.Path(), required=True)
@click.option("--video", "video_id", required=True)
@click.option("--frame", type=int, required=True)
@click.option("--assigner", type=click.Choice(["plus", "yowo"]), default="plus",
              show_default=True)
@click.option("--checkpoint", "ckpt_path", type=click.Path(), default=None,
              help="Predictions for the yowo assigner (zero grid if omitted).")
@click.option("--config", "config_path", type=click.Path(), default=None)
@_guarded
def assign_debug(data_dir, video_id, frame, assigner, ckpt_path, config_path):
    """Dump one frame's assignment map as a text grid plus JSON."""
    if ckpt_path is not None:
        cfg, head, _, _ = load_checkpoint(ckpt_path)
    else:
        cfg = load_config(config_path)
        head = None
    manifest, clips = load_dataset(data_dir)

    clip = next((c for c in clips if c.video_id == video_id), None)
    if clip is None:
        raise ConfigError(f"video {video_id!r} not found in {data_dir}")
    if not 0 <= frame < clip.n_frames:
        raise ConfigError(f"frame {frame} out of range (clip has {clip.n_frames})")

    model = cfg["model"]
    anchors = parse_anchors(model["anchors"])
    s, stride = model["grid_size"], model["stride"]
    num_classes = manifest.num_classes
    gts = clip.frames[frame]

    if assigner == "plus":
        amap = assign_plus(gts, anchors, s, stride, num_classes)
    else:
        if head is None:
            rng = np.random.default_rng(0)
            head = init_head(9 + 2 * num_classes, anchors.shape[0], num_classes, rng, scale=0.0)
        from .model import extract_features
        feats = extract_features(clip, frame, s, stride, num_classes,
                                 cfg["data"]["clip_length"])
        preds = forward(head, feats, anchors.shape[0], num_classes)
        amap = assign_yowo_baseline(gts, preds, anchors, s, stride, num_classes)

    pos_per_cell = amap.positive.sum(axis=2)
    click.echo(f"assignment for {video_id} frame {frame} ({assigner}); "
               f"{amap.n_gt} gts, {int(amap.positive.sum())} positives, "
               f"{amap.n_dropped} dropped")
    click.echo("positives per cell (rows are grid y):")
    for gy in range(s):
        click.echo("  " + " ".join(
            str(int(pos_per_cell[gy, gx])) if pos_per_cell[gy, gx] else "."
            for gx in range(s)
        ))

    positive_anchors = [[] for _ in range(amap.n_gt)]
    for gy, gx, b in np.argwhere(amap.positive):
        positive_anchors[int(amap.gt_index[gy, gx, b])].append(int(b))
    doc = {
        "video_id": video_id,
        "frame_index": frame,
        "assigner": assigner,
        "n_gt": int(amap.n_gt),
        "n_positive": int(amap.positive.sum()),
        "n_dropped": int(amap.n_dropped),
        "anchors": [[float(w), float(h)] for w, h in anchors],
        "candidate_ious": [[float(v) for v in row] for row in amap.candidate_ious],
        "gt_positive_anchors": positive_anchors,
        "entries": [],
    }
    for gy, gx, b in np.argwhere(amap.positive):
        doc["entries"].append({
            "cell": [int(gx), int(gy)],
            "anchor": int(b),
            "gt_index": int(amap.gt_index[gy, gx, b]),
            "conf_target": float(amap.conf_targets[gy, gx, b]),
            "box_target": [float(v) for v in amap.box_targets[gy, gx, b]],
            "class_target": [float(v) for v in amap.class_targets[gy, gx, b]],
        })
    click.echo(json.dumps(doc, sort_keys=True, indent=2))


if __name__ == "__main__":
    main()
