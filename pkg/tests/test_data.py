"""Synthetic clip generation and JSONL annotation round-trips."""

import json
from pathlib import Path

import numpy as np
import pytest

from stadkit.assignment import GroundTruth
from stadkit.datasets import (
    MOTION_PROFILES,
    class_style,
    generate_clip,
    generate_dataset,
    load_annotations,
    load_dataset,
    save_annotations,
)
from stadkit.exceptions import AnnotationParseError, ConfigError
from stadkit.postprocess import Detection


def tree_bytes(root):
    root = Path(root)
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


# ---------------------------------------------------------------- generation


def test_generation_is_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    generate_dataset(a, seed=5, n_train=3, n_eval=2, n_frames=8)
    generate_dataset(b, seed=5, n_train=3, n_eval=2, n_frames=8)
    assert tree_bytes(a) == tree_bytes(b)
    different = tmp_path / "c"
    generate_dataset(different, seed=6, n_train=3, n_eval=2, n_frames=8)
    assert tree_bytes(a) != tree_bytes(different)


def test_generated_boxes_stay_inside_frame():
    rng = np.random.default_rng(1)
    for profile in MOTION_PROFILES:
        for i in range(10):
            clip = generate_clip(rng, f"v{i}", 224, 224, 24, 4, profile)
            for frame in clip.frames:
                for gt in frame:
                    x1, y1, x2, y2 = gt.box
                    assert 0.0 <= x1 < x2 <= 224.0 + 1e-9
                    assert 0.0 <= y1 < y2 <= 224.0 + 1e-9


def test_clip_structure_and_instances():
    rng = np.random.default_rng(3)
    clip = generate_clip(rng, "vid", 224, 224, 6, 4, "bounce")
    assert clip.n_frames == 6
    n_objects = clip.motion["n_objects"]
    assert 1 <= n_objects <= 3
    for f, frame in enumerate(clip.frames):
        assert len(frame) == n_objects
        for gt in frame:
            assert gt.frame_index == f and gt.video_id == "vid"
            assert gt.instance_id.startswith("vid_obj")
    # instance ids persist across frames
    ids = {gt.instance_id for gt in clip.all_ground_truths()}
    assert len(ids) == n_objects


def test_class_style_cycles_with_growth():
    base = class_style(0)
    wrapped = class_style(4)
    assert wrapped[0] == pytest.approx(base[0] * 1.15)
    assert wrapped[4] == base[4]  # speed does not scale


def test_class_sizes_are_separable():
    # class 0 boxes must stay smaller than class 2 boxes for every draw
    rng = np.random.default_rng(7)
    small = class_style(0)
    large = class_style(2)
    assert small[1] < large[0]
    for _ in range(50):
        w0 = rng.uniform(small[0], small[1])
        w2 = rng.uniform(large[0], large[1])
        assert w0 < w2


def test_generate_dataset_layout(tmp_path):
    manifest = generate_dataset(tmp_path, seed=0, n_train=4, n_eval=2, n_frames=5)
    data = json.loads((tmp_path / "manifest.json").read_text())
    assert data["format_version"] == 1
    assert data["class_names"] == ["class_0", "class_1", "class_2", "class_3"]
    assert len(data["clips"]) == 6
    splits = [c["split"] for c in data["clips"]]
    assert splits.count("train") == 4 and splits.count("eval") == 2
    for entry in data["clips"]:
        assert (tmp_path / entry["path"]).is_file()
    assert manifest.num_classes == 4


def test_generate_dataset_rejects_bad_args(tmp_path):
    with pytest.raises(ConfigError, match="motion profile"):
        generate_dataset(tmp_path, seed=0, n_train=1, n_eval=0, motion_profile="orbit")
    with pytest.raises(ValueError, match="num_classes"):
        generate_dataset(tmp_path, seed=0, n_train=1, n_eval=0, num_classes=1)
    with pytest.raises(ValueError, match="n_train"):
        generate_dataset(tmp_path, seed=0, n_train=0, n_eval=0)


# ----------------------------------------------------------------- round-trip


def test_annotation_round_trip(tmp_path):
    records = [
        GroundTruth(box=np.array([1.0, 2.0, 30.0, 40.0]), class_id=2,
                    frame_index=3, video_id="v1", instance_id="v1_obj0"),
        Detection(box=np.array([5.0, 6.0, 25.0, 26.0]), class_id=1,
                  score=0.75, frame_index=3, video_id="v1"),
    ]
    path = tmp_path / "ann.jsonl"
    save_annotations(records, path)
    back = load_annotations(path)
    assert isinstance(back[0], GroundTruth) and isinstance(back[1], Detection)
    assert np.array_equal(back[0].box, records[0].box)
    assert back[0].instance_id == "v1_obj0"
    assert back[1].score == 0.75

    # saved lines are sorted-key JSON, one object per line
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    for line in lines:
        obj = json.loads(line)
        assert list(obj) == sorted(obj)


def test_load_annotations_empty_and_blank_lines(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert load_annotations(path) == []
    path.write_text("\n\n")
    assert load_annotations(path) == []


def test_load_annotations_error_carries_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    good = json.dumps({"box": [0, 0, 10, 10], "class_id": 0})
    path.write_text(good + "\n{broken\n")
    with pytest.raises(AnnotationParseError, match=r"bad\.jsonl:2: invalid JSON"):
        load_annotations(path)

    path.write_text(good + "\n" + json.dumps({"class_id": 0}) + "\n")
    with pytest.raises(AnnotationParseError, match=r':2: missing "box"'):
        load_annotations(path)

    path.write_text(json.dumps({"box": [0, 0, 10], "class_id": 0}) + "\n")
    with pytest.raises(AnnotationParseError, match=":1: box must be 4 numbers"):
        load_annotations(path)


def test_load_annotations_class_checks(tmp_path):
    path = tmp_path / "cls.jsonl"
    path.write_text(json.dumps({"box": [0, 0, 5, 5], "class_name": "jump"}) + "\n")
    with pytest.raises(AnnotationParseError, match="unknown class name 'jump'"):
        load_annotations(path, class_names=["run", "walk"])
    back = load_annotations(
        tmp_path / "cls.jsonl", class_names=["run", "jump"]
    )
    assert back[0].class_id == 1

    path.write_text(json.dumps({"box": [0, 0, 5, 5], "class_id": 9,
                                "instance_id": "x"}) + "\n")
    with pytest.raises(AnnotationParseError, match="class_id 9 outside"):
        load_annotations(path, class_names=["run", "jump"])
    # without a class table the id passes through unchecked
    assert load_annotations(path)[0].class_ids() == (9,)


def test_load_dataset_round_trip(tmp_path):
    generate_dataset(tmp_path, seed=11, n_train=3, n_eval=2, n_frames=4)
    manifest, clips = load_dataset(tmp_path)
    assert len(clips) == 5
    _, train_only = load_dataset(tmp_path, split="train")
    assert [c.video_id for c in train_only] == ["train_0000", "train_0001", "train_0002"]
    clip = train_only[0]
    assert clip.width == clip.height == 224
    assert clip.n_frames == 4
    assert all(
        gt.video_id == clip.video_id for frame in clip.frames for gt in frame
    )


def test_load_dataset_errors(tmp_path):
    with pytest.raises(ConfigError, match="manifest.json"):
        load_dataset(tmp_path / "nowhere")

    generate_dataset(tmp_path, seed=0, n_train=1, n_eval=0, n_frames=4)
    manifest_path = tmp_path / "manifest.json"
    data = json.loads(manifest_path.read_text())

    dupe = dict(data)
    dupe["clips"] = data["clips"] + data["clips"]
    manifest_path.write_text(json.dumps(dupe))
    with pytest.raises(ConfigError, match="duplicate video_id"):
        load_dataset(tmp_path)
    manifest_path.write_text(json.dumps(data))

    clip_path = tmp_path / data["clips"][0]["path"]
    clip_path.write_text(json.dumps(
        {"box": [0, 0, 5, 5], "class_id": 0, "frame_index": 99, "instance_id": "x"}) + "\n")
    with pytest.raises(ConfigError, match="frame_index 99 outside"):
        load_dataset(tmp_path)

    clip_path.write_text(json.dumps(
        {"box": [0, 0, 5, 5], "class_id": 0, "score": 0.5}) + "\n")
    with pytest.raises(ConfigError, match="detections, not ground truth"):
        load_dataset(tmp_path)
