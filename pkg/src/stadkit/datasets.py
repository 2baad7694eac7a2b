"""Synthetic moving-box clips with exact ground truth, and annotation I/O.

Each clip contains one to three objects moving with constant velocity and
bouncing off the frame walls. An object's class fixes its size range and
speed, so classes are distinguishable both geometrically and temporally.
Everything is generated from a seeded RNG and serialized as JSON lines,
so datasets are byte-identical across runs with the same seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assignment import GroundTruth
from .exceptions import AnnotationParseError, ConfigError
from .validation import check_positive_int

FORMAT_VERSION = 1
MOTION_PROFILES = ("bounce", "drift")

# per-class (min_w, max_w, min_h, max_h, speed in px/frame); classes beyond
# the table cycle through it with a mild size scale-up
_CLASS_STYLES = [
    (24.0, 34.0, 24.0, 34.0, 2.0),
    (36.0, 50.0, 36.0, 50.0, 4.0),
    (56.0, 72.0, 56.0, 72.0, 1.0),
    (62.0, 80.0, 30.0, 42.0, 3.0),
]


@dataclass
class SyntheticClip:
    """K frames of ground-truth boxes for one generated video."""

    video_id: str
    width: int
    height: int
    frames: list = field(default_factory=list)
    motion: dict = field(default_factory=dict)

    @property
    def n_frames(self):
        return len(self.frames)

    def all_ground_truths(self):
        out = []
        for frame in self.frames:
            out.extend(frame)
        return out


@dataclass
class DatasetManifest:
    """Index of the generated clip files plus the generation parameters."""

    class_names: list
    seed: int
    params: dict
    clips: list = field(default_factory=list)

    def as_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "class_names": list(self.class_names),
            "seed": int(self.seed),
            "params": dict(self.params),
            "clips": list(self.clips),
        }

    @property
    def num_classes(self):
        return len(self.class_names)


def class_style(class_id):
    base = _CLASS_STYLES[class_id % len(_CLASS_STYLES)]
    scale = 1.0 + 0.15 * (class_id // len(_CLASS_STYLES))
    return (base[0] * scale, base[1] * scale, base[2] * scale, base[3] * scale, base[4])


def _simulate_object(rng, width, height, class_id, n_frames, motion_profile):
    min_w, max_w, min_h, max_h, speed = class_style(class_id)
    w = rng.uniform(min_w, max_w)
    h = rng.uniform(min_h, max_h)
    # center starts anywhere the box fully fits
    cx = rng.uniform(w / 2, width - w / 2)
    cy = rng.uniform(h / 2, height - h / 2)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    vx = speed * np.cos(angle)
    vy = speed * np.sin(angle)

    boxes = []
    for _ in range(n_frames):
        boxes.append((cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2))
        cx += vx
        cy += vy
        if motion_profile == "bounce":
            # reflect off walls so the box stays fully inside
            if cx < w / 2:
                cx = w - cx
                vx = -vx
            elif cx > width - w / 2:
                cx = 2 * (width - w / 2) - cx
                vx = -vx
            if cy < h / 2:
                cy = h - cy
                vy = -vy
            elif cy > height - h / 2:
                cy = 2 * (height - h / 2) - cy
                vy = -vy
        cx = float(np.clip(cx, w / 2, width - w / 2))
        cy = float(np.clip(cy, h / 2, height - h / 2))
    return boxes


def generate_clip(rng, video_id, width, height, n_frames, num_classes, motion_profile,
                  max_objects=3):
    n_objects = int(rng.integers(1, max_objects + 1))
    class_ids = [int(rng.integers(0, num_classes)) for _ in range(n_objects)]
    tracks = [
        _simulate_object(rng, width, height, cid, n_frames, motion_profile)
        for cid in class_ids
    ]
    frames = []
    for f in range(n_frames):
        frame = []
        for obj, cid in enumerate(class_ids):
            frame.append(
                GroundTruth(
                    box=np.asarray(tracks[obj][f]),
                    class_id=cid,
                    frame_index=f,
                    video_id=video_id,
                    instance_id=f"{video_id}_obj{obj}",
                )
            )
        frames.append(frame)
    return SyntheticClip(
        video_id=video_id,
        width=width,
        height=height,
        frames=frames,
        motion={"profile": motion_profile, "n_objects": n_objects, "class_ids": class_ids},
    )


def generate_dataset(out_dir, seed, n_train, n_eval, n_frames=16, num_classes=4,
                     image_size=224, motion_profile="bounce"):
    """Write a manifest plus one JSONL ground-truth file per clip.

    Layout: ``<out_dir>/manifest.json`` and ``<out_dir>/clips/<video_id>.jsonl``.
    Deterministic: the same arguments produce byte-identical trees.
    """
    check_positive_int(n_train, "n_train")
    if n_eval < 0:
        raise ValueError(f"n_eval must be non-negative, got {n_eval}")
    check_positive_int(n_frames, "n_frames")
    check_positive_int(image_size, "image_size")
    if num_classes < 2:
        raise ValueError(f"num_classes must be at least 2, got {num_classes}")
    if motion_profile not in MOTION_PROFILES:
        raise ConfigError(
            f"unknown motion profile {motion_profile!r}; choose from {MOTION_PROFILES}"
        )

    out_dir = Path(out_dir)
    clips_dir = out_dir / "clips"
    clips_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    manifest = DatasetManifest(
        class_names=[f"class_{i}" for i in range(num_classes)],
        seed=seed,
        params={
            "n_train": int(n_train),
            "n_eval": int(n_eval),
            "n_frames": int(n_frames),
            "num_classes": int(num_classes),
            "image_size": int(image_size),
            "motion_profile": motion_profile,
        },
    )
    for split, count in (("train", n_train), ("eval", n_eval)):
        for i in range(count):
            video_id = f"{split}_{i:04d}"
            clip = generate_clip(
                rng, video_id, image_size, image_size, n_frames, num_classes, motion_profile
            )
            rel_path = f"clips/{video_id}.jsonl"
            save_annotations(clip.all_ground_truths(), out_dir / rel_path)
            manifest.clips.append({"video_id": video_id, "path": rel_path, "split": split})

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest.as_dict(), sort_keys=True, indent=2) + "\n")
    return manifest


def _record_to_dict(record):
    if isinstance(record, GroundTruth):
        cls = record.class_ids()
        return {
            "video_id": record.video_id,
            "frame_index": int(record.frame_index),
            "class_id": list(cls) if len(cls) > 1 else int(cls[0]),
            "score": 1.0,
            "box": [float(v) for v in record.box],
            "instance_id": record.instance_id,
        }
    return record.as_dict()


def save_annotations(records, path):
    """Write detections or ground truths as one JSON object per line."""
    path = Path(path)
    lines = [json.dumps(_record_to_dict(r), sort_keys=True) for r in records]
    path.write_text("".join(line + "\n" for line in lines))


def load_annotations(path, class_names=None):
    """Parse a JSON-lines annotation file into GroundTruth / Detection objects.

    Lines carrying an ``instance_id`` become GroundTruth records, the rest
    Detection records. Malformed lines raise with their 1-based line
    number; class names (when a table is given) and class ids are checked.
    """
    from .postprocess import Detection

    path = Path(path)
    records = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise AnnotationParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise AnnotationParseError(f"{path}:{lineno}: expected a JSON object")
            if "box" not in obj:
                raise AnnotationParseError(f"{path}:{lineno}: missing \"box\" field")
            try:
                box = [float(v) for v in obj["box"]]
            except (TypeError, ValueError) as exc:
                raise AnnotationParseError(f"{path}:{lineno}: box must be 4 numbers") from exc
            if len(box) != 4:
                raise AnnotationParseError(f"{path}:{lineno}: box must be 4 numbers")

            class_id = obj.get("class_id")
            if class_id is None and "class_name" in obj:
                if class_names is None or obj["class_name"] not in class_names:
                    raise AnnotationParseError(
                        f"{path}:{lineno}: unknown class name {obj['class_name']!r}"
                    )
                class_id = class_names.index(obj["class_name"])
            if class_id is None:
                raise AnnotationParseError(f"{path}:{lineno}: missing \"class_id\" field")
            ids = class_id if isinstance(class_id, list) else [class_id]
            if class_names is not None:
                for cid in ids:
                    if not 0 <= int(cid) < len(class_names):
                        raise AnnotationParseError(
                            f"{path}:{lineno}: class_id {cid} outside the {len(class_names)}-entry class table"
                        )

            try:
                if "instance_id" in obj:
                    records.append(
                        GroundTruth(
                            box=np.asarray(box),
                            class_id=class_id,
                            frame_index=int(obj.get("frame_index", 0)),
                            video_id=str(obj.get("video_id", "")),
                            instance_id=obj["instance_id"],
                        )
                    )
                else:
                    records.append(
                        Detection(
                            box=np.asarray(box),
                            class_id=int(class_id),
                            score=float(obj.get("score", 1.0)),
                            frame_index=int(obj.get("frame_index", 0)),
                            video_id=str(obj.get("video_id", "")),
                        )
                    )
            except (TypeError, ValueError) as exc:
                raise AnnotationParseError(f"{path}:{lineno}: {exc}") from exc
    return records


def load_dataset(data_dir, split=None):
    """Read a generated dataset back as (manifest, list of SyntheticClip)."""
    data_dir = Path(data_dir)
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"no manifest.json under {data_dir}")
    raw = json.loads(manifest_path.read_text())
    manifest = DatasetManifest(
        class_names=raw["class_names"],
        seed=raw["seed"],
        params=raw["params"],
        clips=raw["clips"],
    )
    size = int(manifest.params["image_size"])
    n_frames = int(manifest.params["n_frames"])

    clips = []
    seen = set()
    for entry in manifest.clips:
        if entry["video_id"] in seen:
            raise ConfigError(f"duplicate video_id {entry['video_id']!r} in manifest")
        seen.add(entry["video_id"])
        if split is not None and entry["split"] != split:
            continue
        records = load_annotations(data_dir / entry["path"], manifest.class_names)
        frames = [[] for _ in range(n_frames)]
        for gt in records:
            if not isinstance(gt, GroundTruth):
                raise ConfigError(f"{entry['path']} holds detections, not ground truth")
            if not 0 <= gt.frame_index < n_frames:
                raise ConfigError(
                    f"{entry['path']} frame_index {gt.frame_index} outside clip length {n_frames}"
                )
            frames[gt.frame_index].append(gt)
        clips.append(
            SyntheticClip(
                video_id=entry["video_id"],
                width=size,
                height=size,
                frames=frames,
            )
        )
    return manifest, clips


def render_clip(clip, out_dir, class_names=None):
    """Optional PNG rendering of a clip for eyeballing; needs Pillow."""
    try:
        from PIL import Image, ImageDraw
    except ImportError as exc:
        raise ConfigError("rendering requires the Pillow package") from exc

    palette = [(220, 60, 60), (60, 160, 220), (90, 200, 90), (230, 180, 40),
               (170, 90, 220), (240, 120, 40)]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for f, frame in enumerate(clip.frames):
        img = Image.new("RGB", (clip.width, clip.height), (24, 24, 24))
        draw = ImageDraw.Draw(img)
        for gt in frame:
            color = palette[gt.primary_class() % len(palette)]
            draw.rectangle([tuple(gt.box[:2]), tuple(gt.box[2:])], outline=color, width=2)
            label = (
                class_names[gt.primary_class()]
                if class_names
                else str(gt.primary_class())
            )
            draw.text((gt.box[0] + 2, gt.box[1] + 2), label, fill=color)
        img.save(out_dir / f"{clip.video_id}_{f:03d}.png")
