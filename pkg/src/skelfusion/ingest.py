"""Dataset manifests, keypoint files, 3D->2D projection and synthetic data.

File formats
------------
``manifest.json``
    ``{"num_classes", "class_names", "layout_name", "clips": [...],
    "intrinsics": {view_id: {fx, fy, cx, cy}}, "frame_size": [W, H]}``.
    Each clip entry holds ``clip_id, body_path, hands_path, label, split,
    person_id, view_id``; paths are relative to the manifest's directory.
body file (JSON lines)
    one record per frame: ``{"t": float, "valid": bool, "coords": [J*dims floats]}``
    in row-major joint order.
hands file (JSON lines)
    one record per frame: ``{"detections": [{"handedness_hint", "score",
    "coords_2d": [42 floats], "coords_3d": [63 floats]}, ...]}``.  Post-processed
    files add ``"hands": {"left": {"fill_source", "coords"}, "right": {...}}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    HAND_JOINTS,
    SPLITS,
    BodyFrame,
    CameraIntrinsics,
    Clip,
    HandDetection,
    HandFrame,
    SkelfusionError,
    ValidationError,
    get_layout,
)


class ManifestParseError(SkelfusionError, ValueError):
    pass


class ManifestValidationError(ValidationError):
    pass


class MissingFileError(SkelfusionError, FileNotFoundError):
    pass


class FrameCountMismatchError(ValidationError):
    pass


class NonPositiveDepthError(ValidationError):
    pass


@dataclass(frozen=True)
class ClipEntry:
    clip_id: str
    body_path: Path
    hands_path: Path
    label: int
    split: str
    person_id: str = ""
    view_id: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    num_classes: int
    class_names: tuple
    layout_name: str
    clips: tuple
    intrinsics: dict = field(default_factory=dict)
    frame_size: Optional[tuple] = None
    path: Optional[Path] = None

    def entry(self, clip_id: str) -> ClipEntry:
        for c in self.clips:
            if c.clip_id == clip_id:
                return c
        raise KeyError(f"clip {clip_id!r} not in manifest")

    def split_ids(self, split: str) -> list[str]:
        return [c.clip_id for c in self.clips if c.split == split]


def _require(cond, msg, exc=ManifestValidationError):
    if not cond:
        raise exc(msg)


def load_manifest(path) -> DatasetManifest:
    """Read and fully validate a manifest; any violated invariant raises."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise MissingFileError(f"manifest not found: {path}") from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ManifestParseError(f"{path}: {e}") from None
    if not isinstance(doc, dict):
        raise ManifestParseError(f"{path}: top level must be an object")

    root = path.parent
    try:
        num_classes = doc["num_classes"]
        class_names = tuple(str(n) for n in doc.get("class_names", range(num_classes)))
        layout_name = doc["layout_name"]
        raw_clips = doc["clips"]
        raw_intr = doc.get("intrinsics") or {}
        frame_size = doc.get("frame_size")
    except (KeyError, TypeError) as e:
        raise ManifestParseError(f"{path}: missing key {e}") from None

    _require(isinstance(num_classes, int) and not isinstance(num_classes, bool) and num_classes > 0,
             "num_classes must be a positive integer")
    _require(len(class_names) == num_classes, "class_names length must equal num_classes")
    try:
        get_layout(layout_name)
    except (KeyError, TypeError) as e:
        raise ManifestValidationError(str(e)) from None
    _require(isinstance(raw_clips, list), "clips must be a list", ManifestParseError)

    intrinsics = {}
    try:
        for view, v in raw_intr.items():
            intrinsics[str(view)] = CameraIntrinsics(float(v["fx"]), float(v["fy"]), float(v["cx"]), float(v["cy"]))
    except (KeyError, TypeError, AttributeError, ValueError) as e:
        raise ManifestValidationError(f"bad intrinsics: {e}") from None

    clips, seen = [], set()
    for i, c in enumerate(raw_clips):
        try:
            entry = ClipEntry(
                clip_id=str(c["clip_id"]),
                body_path=root / c["body_path"],
                hands_path=root / c["hands_path"],
                label=c["label"],
                split=c["split"],
                person_id=str(c.get("person_id", "")),
                view_id=str(c.get("view_id", "")),
            )
        except (KeyError, TypeError) as e:
            raise ManifestParseError(f"clip #{i}: missing or bad field {e}") from None
        _require(entry.clip_id not in seen, f"duplicate clip_id {entry.clip_id!r}")
        seen.add(entry.clip_id)
        _require(isinstance(entry.label, int) and not isinstance(entry.label, bool)
                 and 0 <= entry.label < num_classes,
                 f"clip {entry.clip_id}: label {entry.label!r} outside [0, {num_classes})")
        _require(entry.split in SPLITS, f"clip {entry.clip_id}: bad split {entry.split!r}")
        for p in (entry.body_path, entry.hands_path):
            if not p.is_file():
                raise MissingFileError(f"clip {entry.clip_id}: missing file {p}")
        clips.append(entry)

    if frame_size is not None:
        try:
            frame_size = (int(frame_size[0]), int(frame_size[1]))
        except (TypeError, ValueError, IndexError):
            raise ManifestValidationError("frame_size must be [W, H]") from None
    return DatasetManifest(num_classes, class_names, layout_name, tuple(clips),
                           intrinsics, frame_size, path)


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ManifestParseError(f"{path}:{lineno}: record must be an object")
                records.append(rec)
    except FileNotFoundError:
        raise MissingFileError(str(path)) from None
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ManifestParseError(f"{path}: {e}") from None
    return records


def _parse_body(records, layout, path) -> list[BodyFrame]:
    frames, last_valid = [], None
    for i, rec in enumerate(records):
        try:
            valid = rec.get("valid", True)
            t = float(rec.get("t", i))
            flat = np.asarray(rec["coords"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestParseError(f"{path} frame {i}: {e}") from None
        if not isinstance(valid, bool):
            raise ManifestParseError(f"{path} frame {i}: 'valid' must be boolean")
        if flat.ndim != 1 or flat.size % layout.joint_count or flat.size // layout.joint_count not in (2, 3):
            raise ManifestParseError(
                f"{path} frame {i}: {flat.size} coordinates do not fit {layout.joint_count} joints"
            )
        coords = flat.reshape(layout.joint_count, -1)
        if valid and not np.all(np.isfinite(coords)):
            raise ManifestValidationError(f"{path} frame {i}: valid frame with non-finite coords")
        if valid:
            if last_valid is None:
                # leading invalid frames take the first valid pose
                frames = [BodyFrame(coords, f.timestamp, False) for f in frames]
            last_valid = coords
            frames.append(BodyFrame(coords, t, True))
        else:
            frames.append(BodyFrame(last_valid if last_valid is not None else np.zeros_like(coords), t, False))
    if last_valid is None:
        raise ManifestValidationError(f"{path}: clip has no valid body frame")
    if len({f.coords.shape for f in frames}) != 1:
        raise ManifestParseError(f"{path}: inconsistent coordinate dims across frames")
    return frames


def _parse_detection(d, where) -> HandDetection:
    try:
        return HandDetection(
            coords_2d=np.asarray(d["coords_2d"], dtype=np.float64),
            coords_3d=np.asarray(d["coords_3d"], dtype=np.float64),
            score=float(d.get("score", 1.0)),
            handedness_hint=d.get("handedness_hint", "unknown"),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        if isinstance(e, ValidationError):
            raise ManifestValidationError(f"{where}: {e}") from None
        raise ManifestParseError(f"{where}: {e}") from None


def _parse_hand_frame(rec, where) -> HandFrame:
    kw, src = {}, {}
    for side in ("left", "right"):
        s = rec.get(side)
        if s is None:
            continue
        try:
            flat = np.asarray(s["coords"], dtype=np.float64)
            coords = flat.reshape(HAND_JOINTS, -1)
            src[side] = s.get("fill_source", "observed")
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ManifestParseError(f"{where}: {e}") from None
        kw[side] = coords
    try:
        return HandFrame(fill_source=src, **kw)
    except ValidationError as e:
        raise ManifestValidationError(f"{where}: {e}") from None


def load_clip(manifest: DatasetManifest, clip_id: str) -> Clip:
    """Load one clip with its body stream, raw detections and (if present) processed hands."""
    entry = manifest.entry(clip_id)
    layout = get_layout(manifest.layout_name)
    body = _parse_body(_read_jsonl(entry.body_path), layout, entry.body_path)
    hand_recs = _read_jsonl(entry.hands_path)
    if len(hand_recs) != len(body):
        raise FrameCountMismatchError(
            f"clip {clip_id}: {len(body)} body frames but {len(hand_recs)} detection records"
        )
    raw, processed = [], []
    for i, rec in enumerate(hand_recs):
        where = f"{entry.hands_path} frame {i}"
        dets = rec.get("detections", [])
        if not isinstance(dets, list):
            raise ManifestParseError(f"{where}: detections must be a list")
        raw.append(tuple(_parse_detection(d, where) for d in dets))
        if "hands" in rec:
            if not isinstance(rec["hands"], dict):
                raise ManifestParseError(f"{where}: hands must be an object")
            processed.append(_parse_hand_frame(rec["hands"], where))
    if processed and len(processed) != len(body):
        raise ManifestParseError(f"{entry.hands_path}: processed hands missing on some frames")
    try:
        return Clip(
            clip_id=entry.clip_id, label=entry.label, body_frames=body, raw_detections=raw,
            layout_name=manifest.layout_name, split=entry.split, person_id=entry.person_id,
            view_id=entry.view_id, hand_frames=processed or None,
        )
    except ValidationError as e:
        raise ManifestValidationError(str(e)) from None


def project_points(xyz: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of ``... x 3`` camera-frame points to pixels."""
    xyz = np.asarray(xyz, dtype=np.float64)
    z = xyz[..., 2]
    if np.any(~(z > 0)):
        raise NonPositiveDepthError("all points must have positive depth")
    u = intr.fx * xyz[..., 0] / z + intr.cx
    v = intr.fy * xyz[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def project_body_3d_to_2d(frame: BodyFrame, intr: CameraIntrinsics) -> BodyFrame:
    if frame.dims != 3:
        raise ValidationError("projection needs a 3D body frame")
    return BodyFrame(project_points(frame.coords, intr), frame.timestamp, frame.valid)


# ---------------------------------------------------------------------------
# serialization


def _flat(a) -> list[float]:
    return [float(x) for x in np.asarray(a, dtype=np.float64).ravel()]


def body_record(frame: BodyFrame) -> dict:
    return {"t": float(frame.timestamp), "valid": bool(frame.valid), "coords": _flat(frame.coords)}


def detection_record(det: HandDetection) -> dict:
    return {
        "handedness_hint": det.handedness_hint,
        "score": det.score,
        "coords_2d": _flat(det.coords_2d),
        "coords_3d": _flat(det.coords_3d),
    }


def hand_frame_record(hf: HandFrame) -> dict:
    out = {}
    for side in ("left", "right"):
        c = hf.get(side)
        if c is not None:
            out[side] = {"fill_source": hf.fill_source[side], "coords": _flat(c)}
    return out


def write_jsonl(path, records) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, separators=(",", ":")))
            fh.write("\n")


def write_hands_file(path, raw_detections, hand_frames=None) -> None:
    recs = []
    for i, dets in enumerate(raw_detections):
        rec = {"detections": [detection_record(d) for d in dets]}
        if hand_frames is not None:
            rec["hands"] = hand_frame_record(hand_frames[i])
        recs.append(rec)
    write_jsonl(path, recs)


def write_manifest(path, manifest_doc: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest_doc, indent=1, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# synthetic data

SYNTH_INTRINSICS = CameraIntrinsics(fx=600.0, fy=600.0, cx=640.0, cy=360.0)
SYNTH_FRAME_SIZE = (1280, 720)

# Rest pose for body32 in meters, camera frame (x right, y down, z forward).
_REST = {
    "PELVIS": (0.0, 0.10, 0.0), "SPINE_NAVEL": (0.0, -0.08, 0.0), "SPINE_CHEST": (0.0, -0.25, 0.0),
    "NECK": (0.0, -0.42, 0.0), "HEAD": (0.0, -0.55, 0.0), "NOSE": (0.0, -0.55, -0.10),
    "EYE_LEFT": (-0.03, -0.59, -0.08), "EYE_RIGHT": (0.03, -0.59, -0.08),
    "EAR_LEFT": (-0.08, -0.56, 0.0), "EAR_RIGHT": (0.08, -0.56, 0.0),
    "CLAVICLE_LEFT": (-0.05, -0.38, 0.0), "SHOULDER_LEFT": (-0.18, -0.36, 0.0),
    "ELBOW_LEFT": (-0.22, -0.10, -0.05), "WRIST_LEFT": (-0.15, 0.08, -0.25),
    "HAND_LEFT": (-0.13, 0.10, -0.31), "HANDTIP_LEFT": (-0.12, 0.11, -0.37),
    "THUMB_LEFT": (-0.10, 0.07, -0.32),
    "CLAVICLE_RIGHT": (0.05, -0.38, 0.0), "SHOULDER_RIGHT": (0.18, -0.36, 0.0),
    "ELBOW_RIGHT": (0.22, -0.10, -0.05), "WRIST_RIGHT": (0.15, 0.08, -0.25),
    "HAND_RIGHT": (0.13, 0.10, -0.31), "HANDTIP_RIGHT": (0.12, 0.11, -0.37),
    "THUMB_RIGHT": (0.10, 0.07, -0.32),
    "HIP_LEFT": (-0.10, 0.12, 0.0), "KNEE_LEFT": (-0.11, 0.40, -0.20),
    "ANKLE_LEFT": (-0.11, 0.75, -0.15), "FOOT_LEFT": (-0.11, 0.78, -0.27),
    "HIP_RIGHT": (0.10, 0.12, 0.0), "KNEE_RIGHT": (0.11, 0.40, -0.20),
    "ANKLE_RIGHT": (0.11, 0.75, -0.15), "FOOT_RIGHT": (0.11, 0.78, -0.27),
}

_ARM = {
    side: {
        "full": [f"WRIST_{side}", f"HAND_{side}", f"HANDTIP_{side}", f"THUMB_{side}"],
        "half": [f"ELBOW_{side}"],
    }
    for side in ("LEFT", "RIGHT")
}
_UPPER = ["SPINE_CHEST", "NECK", "HEAD", "NOSE", "EYE_LEFT", "EYE_RIGHT", "EAR_LEFT", "EAR_RIGHT",
          "CLAVICLE_LEFT", "CLAVICLE_RIGHT", "SHOULDER_LEFT", "SHOULDER_RIGHT"]

# Per-primitive arm displacement direction (dx, dy, dz) in meters for
# (left wrist, right wrist), plus torso lean.
_PRIMITIVES = [
    {"left": (0.0, 0.0, 0.0), "right": (0.05, -0.30, -0.15), "lean": 0.0},    # right reach up
    {"left": (-0.30, 0.0, 0.05), "right": (0.0, 0.0, 0.0), "lean": 0.0},     # left lateral sweep
    {"left": (0.0, -0.25, 0.0), "right": (0.0, -0.25, 0.0), "lean": 0.0},    # both lift
    {"left": (0.0, 0.05, -0.10), "right": (0.0, 0.05, -0.10), "lean": 0.15},  # lean forward
    {"left": (0.15, 0.0, 0.0), "right": (-0.15, 0.0, 0.0), "lean": 0.0},     # hands together
    {"left": (0.0, 0.0, -0.25), "right": (0.0, 0.0, 0.15), "lean": 0.0},     # push/pull
]
# Shared small "work at the table" motion for hand-only pairs.
_WORK = {"left": (0.03, -0.02, 0.0), "right": (-0.03, -0.02, 0.0), "lean": 0.02}


def _body_sequence(primitive, T, rng, origin) -> np.ndarray:
    names = get_layout("body32").joint_names
    rest = np.array([_REST[n] for n in names])
    idx = {n: i for i, n in enumerate(names)}
    amp = rng.uniform(0.85, 1.15)
    phase = rng.uniform(-0.3, 0.3)
    cycles = rng.uniform(0.9, 1.1)
    t = np.arange(T) / T
    profile = 0.5 - 0.5 * np.cos(2 * np.pi * cycles * t + phase)  # 0 -> 1 -> 0
    seq = np.repeat(rest[None], T, axis=0)
    for side in ("LEFT", "RIGHT"):
        d = amp * np.asarray(primitive[side.lower()])
        disp = profile[:, None] * d[None]
        for n in _ARM[side]["full"]:
            seq[:, idx[n]] += disp
        for n in _ARM[side]["half"]:
            seq[:, idx[n]] += 0.5 * disp
    lean = amp * primitive["lean"] * profile
    for n in _UPPER + _ARM["LEFT"]["full"] + _ARM["LEFT"]["half"] + _ARM["RIGHT"]["full"] + _ARM["RIGHT"]["half"]:
        seq[:, idx[n], 2] -= lean
    seq += origin
    seq += rng.normal(0.0, 0.004, seq.shape)
    return seq


def _hand_local(T, pattern, rng, mirror) -> np.ndarray:
    """21x3 hand-local keypoints per frame with flexing fingers.

    ``pattern`` fixes the relative phase of the five fingers: ``"sync"`` flexes
    all fingers together, ``"wave"`` alternates neighbouring fingers.
    """
    base_angles = np.deg2rad([-55.0, -20.0, -5.0, 10.0, 25.0])
    seg = np.array([0.035, 0.030, 0.022, 0.020])
    mcp_len = np.array([0.03, 0.09, 0.095, 0.09, 0.08])
    phases = np.zeros(5) if pattern == "sync" else np.array([0.0, np.pi, 0.0, np.pi, 0.0])
    cycles = 2.0 * rng.uniform(0.9, 1.1)
    offset = rng.uniform(0, 2 * np.pi)
    t = np.arange(T) / T
    out = np.zeros((T, HAND_JOINTS, 3))
    for f in range(5):
        flex = 0.75 + 0.75 * np.sin(2 * np.pi * cycles * t + offset + phases[f])  # 0 .. 1.5 rad
        a = base_angles[f]
        direction = np.array([np.sin(a), -np.cos(a), 0.0])
        base = mcp_len[f] * direction
        for k in range(4):
            # finger curls in the plane spanned by its direction and the camera axis
            ang = flex * (k + 1) / 2.0
            step = seg[k] * (np.cos(ang)[:, None] * direction[None] + np.sin(ang)[:, None] * np.array([0, 0, -1.0]))
            base = base + step if np.ndim(base) == 2 else base[None] + step
            out[:, 1 + 4 * f + k] = base
    if mirror:
        out[..., 0] *= -1
    # hand-local origin sits on the palm, not at the wrist
    out -= np.array([0.0, -0.05, 0.01])
    return out


def generate_synthetic_dataset(spec: dict, out_dir) -> DatasetManifest:
    """Write a deterministic synthetic dataset and return its loaded manifest.

    ``spec`` keys: ``num_classes`` (>= 2), ``clips_per_class``, ``T`` (>= 4),
    ``seed``; optional ``hand_pairs``, ``dropout`` (per-hand miss rate) and
    ``spurious`` (rate of far-away false detections).
    """
    num_classes = int(spec["num_classes"])
    per_class = int(spec["clips_per_class"])
    T = int(spec["T"])
    seed = int(spec["seed"])
    if num_classes < 2:
        raise ValidationError("num_classes must be >= 2")
    if T < 4:
        raise ValidationError("T must be >= 4")
    if per_class < 1:
        raise ValidationError("clips_per_class must be >= 1")
    n_pairs = int(spec.get("hand_pairs", max(1, num_classes // 4)))
    n_body = num_classes - 2 * n_pairs
    if n_body < 0:
        raise ValidationError("too many hand-only pairs for the class count")
    dropout = float(spec.get("dropout", 0.1))
    spurious = float(spec.get("spurious", 0.05))

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    intr = SYNTH_INTRINSICS
    layout = get_layout("body32")
    class_names = [f"body_{i}" for i in range(n_body)]
    for p in range(n_pairs):
        class_names += [f"hands_{p}_sync", f"hands_{p}_wave"]

    root_ss = np.random.SeedSequence(seed)
    class_ss = root_ss.spawn(num_classes + n_pairs)
    # spawn() advances its parent, so each pair's streams are drawn exactly once
    pair_streams = [class_ss[num_classes + p].spawn(per_class) for p in range(n_pairs)]
    entries = []
    for label in range(num_classes):
        clip_ss = class_ss[label].spawn(per_class)
        pair = (label - n_body) // 2 if label >= n_body else None
        pair_ss = pair_streams[pair] if pair is not None else None
        for k in range(per_class):
            rng = np.random.default_rng(clip_ss[k])
            if pair is None:
                brng = rng
                primitive = _PRIMITIVES[label % len(_PRIMITIVES)]
                pattern = ("sync", "wave")[int(rng.integers(2))]
            else:
                # both classes of a pair draw the body from the same stream
                brng = np.random.default_rng(pair_ss[k])
                primitive = _WORK
                pattern = ("sync", "wave")[(label - n_body) % 2]
            origin = np.array([brng.uniform(-0.3, 0.3), brng.uniform(-0.1, 0.1), brng.uniform(1.8, 2.4)])
            body = _body_sequence(primitive, T, brng, origin)

            clip_id = f"c{label:02d}_{k:03d}"
            body_recs = [{"t": i / 30.0, "valid": True, "coords": _flat(body[i])} for i in range(T)]

            hands = {}
            for side, mirror in (("left", True), ("right", False)):
                local = _hand_local(T, pattern, rng, mirror)
                wrist_idx = layout.left_wrist_idx if side == "left" else layout.right_wrist_idx
                cam = local - local[:, :1] + body[:, wrist_idx][:, None]
                hands[side] = (local, cam)

            det_recs = []
            for i in range(T):
                dets = []
                for side in ("left", "right"):
                    if rng.random() < dropout:
                        continue
                    local, cam = hands[side]
                    c2 = project_points(cam[i], intr) + rng.normal(0.0, 1.0, (HAND_JOINTS, 2))
                    c3 = local[i] + rng.normal(0.0, 0.002, (HAND_JOINTS, 3))
                    hint = side if rng.random() > 0.2 else ("right" if side == "left" else "left")
                    dets.append(HandDetection(c2, c3, float(rng.uniform(0.5, 1.0)), hint))
                if rng.random() < spurious:
                    local = hands["right"][0][i]
                    c2 = local[:, :2] * 600.0 + rng.uniform([100, 100], [1180, 620])
                    dets.append(HandDetection(c2, local, float(rng.uniform(0.1, 0.6)), "unknown"))
                if len(dets) > 1:
                    dets = [dets[j] for j in rng.permutation(len(dets))]
                det_recs.append({"detections": [detection_record(d) for d in dets]})

            body_rel = Path("body") / f"{clip_id}.jsonl"
            hands_rel = Path("hands") / f"{clip_id}.jsonl"
            write_jsonl(out_dir / body_rel, body_recs)
            write_jsonl(out_dir / hands_rel, det_recs)
            split = ("train", "train", "train", "val", "test")[k % 5]
            entries.append({
                "clip_id": clip_id, "body_path": body_rel.as_posix(), "hands_path": hands_rel.as_posix(),
                "label": label, "split": split, "person_id": f"p{k % 10:02d}", "view_id": "front",
            })

    doc = {
        "num_classes": num_classes,
        "class_names": class_names,
        "layout_name": "body32",
        "frame_size": list(SYNTH_FRAME_SIZE),
        "intrinsics": {"front": {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy}},
        "clips": entries,
        "synthetic": {"num_classes": num_classes, "clips_per_class": per_class, "T": T, "seed": seed,
                      "hand_pairs": n_pairs, "dropout": dropout, "spurious": spurious},
    }
    write_manifest(out_dir / "manifest.json", doc)
    return load_manifest(out_dir / "manifest.json")


def load_all_clips(manifest: DatasetManifest, split: Optional[str] = None) -> list[Clip]:
    return [load_clip(manifest, c.clip_id) for c in manifest.clips if split is None or c.split == split]
