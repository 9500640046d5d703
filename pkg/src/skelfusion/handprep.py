"""Hand post-processing: crop windows, wrist-distance selection, forward fill
and alignment of hand-local 3D keypoints to the body skeleton."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import (
    HAND_JOINTS,
    BodyFrame,
    CameraIntrinsics,
    Clip,
    HandDetection,
    HandFrame,
    ValidationError,
)
from .ingest import project_points

SIDES = ("left", "right")


@dataclass(frozen=True)
class HandSelectConfig:
    wrist_dist_threshold: float = 150.0
    crop_size: int = 300
    max_hands: int = 2

    def __post_init__(self):
        if not self.wrist_dist_threshold >= 0:
            raise ValidationError("wrist_dist_threshold must be >= 0")
        if self.crop_size <= 0:
            raise ValidationError("crop_size must be positive")
        if self.max_hands != 2:
            raise ValidationError("max_hands is fixed at 2")


class Rect(NamedTuple):
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0


def _window_1d(center: float, size: int, extent: int) -> tuple[int, int]:
    if extent <= size:
        return 0, extent
    lo = int(np.floor(center - size / 2.0))
    lo = min(max(lo, 0), extent - size)
    return lo, lo + size


def crop_window(frame_size, wrist_2d, crop_size: int = 300) -> Rect:
    """Crop rectangle of ``crop_size`` centred on the wrist, shifted to stay inside the frame."""
    W, H = frame_size
    if W <= 0 or H <= 0:
        raise ValidationError("frame size must be positive")
    u, v = wrist_2d
    if not np.isfinite(u):
        u = W / 2.0
    if not np.isfinite(v):
        v = H / 2.0
    x0, x1 = _window_1d(u, crop_size, W)
    y0, y1 = _window_1d(v, crop_size, H)
    return Rect(x0, y0, x1, y1)


def map_detection_to_full_image(det: HandDetection, rect: Rect) -> HandDetection:
    """Translate patch-local 2D keypoints into full-image pixels; 3D is untouched."""
    shifted = det.coords_2d + np.array([rect.x0, rect.y0], dtype=np.float64)
    return HandDetection(shifted, det.coords_3d, det.score, det.handedness_hint)


def select_hands(
    dets: Sequence[HandDetection],
    left_wrist_2d,
    right_wrist_2d,
    cfg: HandSelectConfig = HandSelectConfig(),
) -> HandFrame:
    """Pick at most one detection per side by wrist distance to the body wrists.

    Detections farther than the threshold from both body wrists are dropped.
    Among the remaining, the assignment with the most filled slots wins; ties
    go to the smallest total wrist distance, then the larger total score, then
    the earliest input positions (right slot first).
    """
    r, l = _select(dets, left_wrist_2d, right_wrist_2d, cfg)
    return HandFrame(
        left=None if l is None else dets[l].coords_2d,
        right=None if r is None else dets[r].coords_2d,
    )


def select_hand_indices(dets, left_wrist_2d, right_wrist_2d, cfg=HandSelectConfig()) -> dict:
    """Like :func:`select_hands` but returns ``{side: detection index or None}``."""
    r, l = _select(dets, left_wrist_2d, right_wrist_2d, cfg)
    return {"left": l, "right": r}


def _select(dets, left_wrist_2d, right_wrist_2d, cfg):
    left_wrist_2d = np.asarray(left_wrist_2d, dtype=np.float64)
    right_wrist_2d = np.asarray(right_wrist_2d, dtype=np.float64)
    if not (np.all(np.isfinite(left_wrist_2d)) and np.all(np.isfinite(right_wrist_2d))):
        raise ValidationError("body wrists must be finite")
    if not dets:
        return None, None

    wrists = np.array([d.wrist_2d for d in dets])
    dist = np.stack([
        np.linalg.norm(wrists - left_wrist_2d, axis=1),
        np.linalg.norm(wrists - right_wrist_2d, axis=1),
    ], axis=1)  # n x (left, right)
    ok = dist <= cfg.wrist_dist_threshold

    n = len(dets)
    left_opts = [None] + [i for i in range(n) if ok[i, 0]]
    right_opts = [None] + [i for i in range(n) if ok[i, 1]]
    best, best_key = (None, None), None
    for r in right_opts:
        for l in left_opts:
            if r is not None and r == l:
                continue
            filled = (r is not None) + (l is not None)
            cost = (dist[r, 1] if r is not None else 0.0) + (dist[l, 0] if l is not None else 0.0)
            score = (dets[r].score if r is not None else 0.0) + (dets[l].score if l is not None else 0.0)
            key = (-filled, cost, -score, (n if r is None else r, n if l is None else l))
            if best_key is None or key < best_key:
                best, best_key = (r, l), key
    return best


def forward_fill(frames: Sequence[HandFrame], body_frames: Sequence[BodyFrame],
                 left_wrist_idx: int = 7, right_wrist_idx: int = 14) -> list[HandFrame]:
    """Fill missing hands per side from the most recent observation.

    Sides never seen so far get a neutral hand: all 21 joints placed on that
    side's body wrist at the current frame.  Body frames must use the same
    coordinate space as the hands.
    """
    if len(frames) != len(body_frames):
        raise ValidationError(f"{len(frames)} hand frames vs {len(body_frames)} body frames")
    wrist_idx = {"left": left_wrist_idx, "right": right_wrist_idx}
    last: dict[str, Optional[np.ndarray]] = {"left": None, "right": None}
    out = []
    for hf, bf in zip(frames, body_frames):
        coords, src = {}, {}
        for side in SIDES:
            c = hf.get(side)
            tag = hf.fill_source.get(side)
            if c is not None and tag == "observed":
                last[side] = c
            if c is not None:
                coords[side], src[side] = c, tag
            elif last[side] is not None:
                coords[side], src[side] = last[side], "filled_from_past"
            else:
                w = bf.coords[wrist_idx[side]]
                coords[side] = np.repeat(w[None], HAND_JOINTS, axis=0)
                src[side] = "neutral"
        out.append(HandFrame(coords["left"], coords["right"], src))
    return out


def align_hand_to_body_frame(hand_3d, body_wrist_3d) -> np.ndarray:
    """Translate a hand-local 3D hand so its wrist lands on the body wrist."""
    hand_3d = np.asarray(hand_3d, dtype=np.float64)
    body_wrist_3d = np.asarray(body_wrist_3d, dtype=np.float64)
    return hand_3d + (body_wrist_3d - hand_3d[0])


@dataclass
class HandStats:
    observed: int = 0
    filled: int = 0
    neutral: int = 0
    discarded: int = 0

    def as_dict(self) -> dict:
        return {"observed": self.observed, "filled": self.filled,
                "neutral": self.neutral, "discarded": self.discarded}


def prepare_hands(
    clip: Clip,
    cfg: HandSelectConfig = HandSelectConfig(),
    dims: int = 3,
    intrinsics: Optional[CameraIntrinsics] = None,
) -> tuple[list[HandFrame], HandStats]:
    """Run selection, representation change and forward fill for a whole clip.

    ``dims=2`` keeps 2D pixel hands; ``dims=3`` moves each selected hand-local
    3D hand onto the 3D body wrist.  Selection always uses 2D wrist distance,
    so a 3D body needs camera intrinsics.
    """
    layout = clip.layout
    body = clip.body_array()
    if body.shape[2] == 3:
        if intrinsics is None:
            raise ValidationError(f"clip {clip.clip_id}: 3D body needs intrinsics for hand selection")
        body_2d = project_points(body, intrinsics)
    else:
        body_2d = body
        if dims == 3:
            raise ValidationError("3D hands need a 3D body skeleton")
    li, ri = layout.left_wrist_idx, layout.right_wrist_idx

    stats = HandStats()
    selected = []
    for t, dets in enumerate(clip.raw_detections):
        idx = select_hand_indices(dets, body_2d[t, li], body_2d[t, ri], cfg)
        used = {i for i in idx.values() if i is not None}
        stats.discarded += len(dets) - len(used)
        coords = {}
        for side, i in idx.items():
            if i is None:
                continue
            if dims == 2:
                coords[side] = dets[i].coords_2d
            else:
                wi = li if side == "left" else ri
                coords[side] = align_hand_to_body_frame(dets[i].coords_3d, body[t, wi])
        selected.append(HandFrame(**coords))

    ref = body if dims == 3 else body_2d
    ref_frames = [BodyFrame(ref[t]) for t in range(len(ref))]
    filled = forward_fill(selected, ref_frames, li, ri)
    for hf in filled:
        for side in SIDES:
            tag = hf.fill_source[side]
            if tag == "observed":
                stats.observed += 1
            elif tag == "filled_from_past":
                stats.filled += 1
            else:
                stats.neutral += 1
    return filled, stats


def hands_to_arrays(hand_frames: Sequence[HandFrame]) -> tuple[np.ndarray, np.ndarray]:
    """Stack complete hand frames into ``(right, left)`` arrays of shape T x 21 x dims."""
    if not all(hf.complete for hf in hand_frames):
        raise ValidationError("hand frames must have both slots filled; run forward_fill first")
    right = np.stack([hf.right for hf in hand_frames])
    left = np.stack([hf.left for hf in hand_frames])
    return right, left
