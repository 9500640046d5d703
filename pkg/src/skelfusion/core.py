"""Domain types and the joint-layout registry.

Every container here is a frozen dataclass and validates itself in
``__post_init__``; arrays are copied and marked read-only so instances can be
shared between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class SkelfusionError(Exception):
    """Base class for all errors raised by this package."""


class LayoutError(SkelfusionError, KeyError):
    """Unknown or malformed joint layout."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


class ValidationError(SkelfusionError, ValueError):
    """A value violates a documented invariant."""


HANDEDNESS = ("left", "right", "unknown")
SPLITS = ("train", "val", "test")
FILL_SOURCES = ("observed", "filled_from_past", "neutral")
HAND_JOINTS = 21


def _frozen(a, dtype=np.float64) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class JointLayout:
    name: str
    joint_count: int
    joint_names: tuple[str, ...]
    dims: int
    left_wrist_idx: int
    right_wrist_idx: int

    def __post_init__(self):
        if self.joint_count <= 0:
            raise LayoutError(f"{self.name}: joint_count must be positive")
        if len(self.joint_names) != self.joint_count:
            raise LayoutError(
                f"{self.name}: {len(self.joint_names)} names for {self.joint_count} joints"
            )
        if len(set(self.joint_names)) != self.joint_count:
            raise LayoutError(f"{self.name}: duplicate joint names")
        if self.dims not in (2, 3):
            raise LayoutError(f"{self.name}: dims must be 2 or 3, got {self.dims}")
        for idx in (self.left_wrist_idx, self.right_wrist_idx):
            if not 0 <= idx < self.joint_count:
                raise LayoutError(f"{self.name}: wrist index {idx} out of range")

    def index(self, joint_name: str) -> int:
        return self.joint_names.index(joint_name)


# Azure Kinect body tracking SDK joint order (K4ABT_JOINT_*).
_BODY32 = (
    "PELVIS", "SPINE_NAVEL", "SPINE_CHEST", "NECK",
    "CLAVICLE_LEFT", "SHOULDER_LEFT", "ELBOW_LEFT", "WRIST_LEFT",
    "HAND_LEFT", "HANDTIP_LEFT", "THUMB_LEFT",
    "CLAVICLE_RIGHT", "SHOULDER_RIGHT", "ELBOW_RIGHT", "WRIST_RIGHT",
    "HAND_RIGHT", "HANDTIP_RIGHT", "THUMB_RIGHT",
    "HIP_LEFT", "KNEE_LEFT", "ANKLE_LEFT", "FOOT_LEFT",
    "HIP_RIGHT", "KNEE_RIGHT", "ANKLE_RIGHT", "FOOT_RIGHT",
    "HEAD", "NOSE", "EYE_LEFT", "EAR_LEFT", "EYE_RIGHT", "EAR_RIGHT",
)

# COCO keypoint order, as produced by Keypoint R-CNN.
_BODY17 = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)

# MediaPipe hand landmark order; joint 0 is the wrist.
_HAND21 = (
    "WRIST",
    "THUMB_CMC", "THUMB_MCP", "THUMB_IP", "THUMB_TIP",
    "INDEX_FINGER_MCP", "INDEX_FINGER_PIP", "INDEX_FINGER_DIP", "INDEX_FINGER_TIP",
    "MIDDLE_FINGER_MCP", "MIDDLE_FINGER_PIP", "MIDDLE_FINGER_DIP", "MIDDLE_FINGER_TIP",
    "RING_FINGER_MCP", "RING_FINGER_PIP", "RING_FINGER_DIP", "RING_FINGER_TIP",
    "PINKY_MCP", "PINKY_PIP", "PINKY_DIP", "PINKY_TIP",
)

_REGISTRY: dict[str, JointLayout] = {}


def register_layout(layout: JointLayout) -> JointLayout:
    if layout.name in _REGISTRY:
        raise LayoutError(f"layout {layout.name!r} already registered")
    _REGISTRY[layout.name] = layout
    return layout


register_layout(JointLayout("body32", 32, _BODY32, 3, left_wrist_idx=7, right_wrist_idx=14))
register_layout(JointLayout("body17", 17, _BODY17, 2, left_wrist_idx=9, right_wrist_idx=10))
# A hand has a single wrist; both indices point at it.
register_layout(JointLayout("hand21", HAND_JOINTS, _HAND21, 3, left_wrist_idx=0, right_wrist_idx=0))


def get_layout(name: str) -> JointLayout:
    """Look up a registered layout (``body32``, ``body17`` or ``hand21``)."""
    try:
        return _REGISTRY[name]
    except KeyError:
        raise LayoutError(f"unknown layout {name!r}; known: {sorted(_REGISTRY)}") from None


def registered_layouts() -> tuple[str, ...]:
    return tuple(sorted(_REGISTRY))


@dataclass(frozen=True)
class BodyFrame:
    coords: np.ndarray
    timestamp: float = 0.0
    valid: bool = True

    def __post_init__(self):
        coords = _frozen(self.coords)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise ValidationError(f"body coords must be J x 2|3, got {coords.shape}")
        if self.valid and not np.all(np.isfinite(coords)):
            raise ValidationError("valid body frame has non-finite coordinates")
        object.__setattr__(self, "coords", coords)

    @property
    def dims(self) -> int:
        return self.coords.shape[1]

    def check_layout(self, layout: JointLayout) -> None:
        if self.coords.shape[0] != layout.joint_count:
            raise ValidationError(
                f"body frame has {self.coords.shape[0]} joints, layout {layout.name} "
                f"expects {layout.joint_count}"
            )


@dataclass(frozen=True)
class HandDetection:
    coords_2d: np.ndarray
    coords_3d: np.ndarray
    score: float = 1.0
    handedness_hint: str = "unknown"

    def __post_init__(self):
        c2 = _frozen(self.coords_2d).reshape(-1, 2) if np.size(self.coords_2d) == 2 * HAND_JOINTS else None
        c3 = _frozen(self.coords_3d).reshape(-1, 3) if np.size(self.coords_3d) == 3 * HAND_JOINTS else None
        if c2 is None or c3 is None:
            raise ValidationError("hand detection needs 21x2 and 21x3 coordinate blocks")
        c2.flags.writeable = False
        c3.flags.writeable = False
        if not (np.all(np.isfinite(c2)) and np.all(np.isfinite(c3))):
            raise ValidationError("hand detection has non-finite coordinates")
        if not 0.0 <= float(self.score) <= 1.0:
            raise ValidationError(f"detection score {self.score} outside [0, 1]")
        if self.handedness_hint not in HANDEDNESS:
            raise ValidationError(f"bad handedness hint {self.handedness_hint!r}")
        object.__setattr__(self, "coords_2d", c2)
        object.__setattr__(self, "coords_3d", c3)
        object.__setattr__(self, "score", float(self.score))

    @property
    def wrist_2d(self) -> np.ndarray:
        return self.coords_2d[0]


@dataclass(frozen=True)
class HandFrame:
    """Two hand slots for one frame. ``fill_source`` maps side -> tag."""

    left: Optional[np.ndarray] = None
    right: Optional[np.ndarray] = None
    fill_source: dict = field(default_factory=dict)

    def __post_init__(self):
        src = dict(self.fill_source)
        for side in ("left", "right"):
            coords = getattr(self, side)
            if coords is None:
                if side in src:
                    raise ValidationError(f"{side} hand absent but tagged {src[side]!r}")
                continue
            coords = _frozen(coords)
            if coords.ndim != 2 or coords.shape[0] != HAND_JOINTS or coords.shape[1] not in (2, 3):
                raise ValidationError(f"{side} hand must be 21 x 2|3, got {coords.shape}")
            if not np.all(np.isfinite(coords)):
                raise ValidationError(f"{side} hand has non-finite coordinates")
            src.setdefault(side, "observed")
            if src[side] not in FILL_SOURCES:
                raise ValidationError(f"bad fill source {src[side]!r}")
            object.__setattr__(self, side, coords)
        object.__setattr__(self, "fill_source", src)

    def get(self, side: str) -> Optional[np.ndarray]:
        return getattr(self, side)

    @property
    def complete(self) -> bool:
        return self.left is not None and self.right is not None


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")


@dataclass(frozen=True)
class Clip:
    clip_id: str
    label: int
    body_frames: tuple
    raw_detections: tuple
    layout_name: str = "body32"
    split: str = "train"
    person_id: str = ""
    view_id: str = ""
    hand_frames: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "body_frames", tuple(self.body_frames))
        object.__setattr__(self, "raw_detections", tuple(tuple(d) for d in self.raw_detections))
        if self.hand_frames is not None:
            object.__setattr__(self, "hand_frames", tuple(self.hand_frames))
        T = len(self.body_frames)
        if T < 1:
            raise ValidationError(f"clip {self.clip_id}: needs at least one frame")
        if len(self.raw_detections) != T:
            raise ValidationError(
                f"clip {self.clip_id}: {T} body frames but {len(self.raw_detections)} detection entries"
            )
        if self.hand_frames is not None and len(self.hand_frames) != T:
            raise ValidationError(f"clip {self.clip_id}: hand stream length mismatch")
        if self.label < 0:
            raise ValidationError(f"clip {self.clip_id}: negative label")
        if self.split not in SPLITS:
            raise ValidationError(f"clip {self.clip_id}: bad split {self.split!r}")
        layout = get_layout(self.layout_name)
        for f in self.body_frames:
            f.check_layout(layout)

    @property
    def num_frames(self) -> int:
        return len(self.body_frames)

    @property
    def layout(self) -> JointLayout:
        return get_layout(self.layout_name)

    def body_array(self) -> np.ndarray:
        """Body coordinates stacked as T x J x dims."""
        return np.stack([f.coords for f in self.body_frames])
