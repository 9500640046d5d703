"""Skeleton-sequence image encoding and the single/multi-image fusion layouts.

An encoded image is ``3 x H x W``: column ``t`` is frame ``t``, each row is
one joint and the colour channels carry the normalized coordinates.  Body
and hands are always normalized separately (they live in different frames
of reference), the two hands together as one part.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from .core import HAND_JOINTS, ValidationError

MODES = ("body_only", "naive_concat", "scaled_stack", "multi_image_2", "multi_image_3")
MULTI_MODES = ("multi_image_2", "multi_image_3")
VALUE_RANGES = {"unit": 1.0, "byte": 255.0}
NUM_HAND_ROWS = 2 * HAND_JOINTS


@dataclass(frozen=True)
class FusionConfig:
    mode: str = "body_only"
    scale_s: int = 4
    input_hw: tuple = (224, 224)
    value_range: str = "unit"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown fusion mode {self.mode!r}; choose from {MODES}")
        if not (isinstance(self.scale_s, int) and 1 <= self.scale_s <= 8):
            raise ValidationError(f"scale_s must be an integer in [1, 8], got {self.scale_s!r}")
        hw = tuple(int(x) for x in self.input_hw)
        if len(hw) != 2 or min(hw) <= 0:
            raise ValidationError(f"bad input_hw {self.input_hw!r}")
        object.__setattr__(self, "input_hw", hw)
        if self.value_range not in VALUE_RANGES:
            raise ValidationError(f"value_range must be one of {tuple(VALUE_RANGES)}")

    @property
    def num_images(self) -> int:
        return {"multi_image_2": 2, "multi_image_3": 3}.get(self.mode, 1)


@dataclass(frozen=True)
class EncodedImage:
    """``data`` is C x H x W float64.

    ``bands`` are ``(part, row_start, row_end)`` in the current rows;
    ``layout_bands`` keep the rows of the composition before any final
    resize, so exact area ratios stay recoverable.
    """

    data: np.ndarray
    value_range: str = "unit"
    bands: tuple = ()
    layout_bands: tuple = field(default=())

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValidationError(f"encoded image must be 3 x H x W, got {self.data.shape}")
        hi = VALUE_RANGES[self.value_range]
        if self.data.size and (self.data.min() < 0 or self.data.max() > hi):
            raise ValidationError(f"pixel values outside [0, {hi:g}]")
        _check_bands(self.bands, self.height)
        if not self.layout_bands:
            object.__setattr__(self, "layout_bands", tuple(self.bands))

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def band(self, name: str) -> tuple[int, int]:
        for n, a, b in self.bands:
            if n == name:
                return a, b
        raise KeyError(name)

    def layout_fraction(self, *names: str) -> float:
        """Share of composition rows held by the named parts."""
        total = self.layout_bands[-1][2] - self.layout_bands[0][1]
        rows = sum(b - a for n, a, b in self.layout_bands if n in names)
        return rows / total

    def to_uint8_hwc(self) -> np.ndarray:
        scale = 255.0 / VALUE_RANGES[self.value_range]
        return np.clip(np.rint(self.data * scale), 0, 255).astype(np.uint8).transpose(1, 2, 0)


def _check_bands(bands, height):
    pos = 0
    for name, a, b in bands:
        if a != pos or b < a:
            raise ValidationError(f"bands do not partition rows: {bands}")
        pos = b
    if bands and pos != height:
        raise ValidationError(f"bands cover {pos} rows of {height}")


def normalize_part(coords: np.ndarray) -> np.ndarray:
    """Min-max normalize each coordinate channel over all frames and joints.

    A constant channel maps to 0.5.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 3:
        raise ValidationError(f"expected T x J x dims, got shape {coords.shape}")
    if not np.all(np.isfinite(coords)):
        raise ValidationError("coordinates must be finite")
    lo = coords.min(axis=(0, 1), keepdims=True)
    hi = coords.max(axis=(0, 1), keepdims=True)
    span = hi - lo
    flat = span == 0
    out = (coords - lo) / np.where(flat, 1.0, span)
    return np.where(flat, 0.5, out)


def encode_part(norm: np.ndarray, value_range: str = "unit", name: str = "part") -> EncodedImage:
    """Render normalized ``T x J x dims`` coordinates as a ``3 x J x T`` image."""
    norm = np.asarray(norm, dtype=np.float64)
    if norm.ndim != 3 or norm.shape[2] not in (2, 3):
        raise ValidationError(f"expected T x J x 2|3, got {norm.shape}")
    if norm.size and (norm.min() < 0.0 or norm.max() > 1.0 or not np.all(np.isfinite(norm))):
        raise ValidationError("normalized input must lie in [0, 1]")
    T, J, d = norm.shape
    img = np.zeros((3, J, T))
    img[:d] = norm.transpose(2, 1, 0)
    img *= VALUE_RANGES[value_range]
    return EncodedImage(img, value_range, ((name, 0, J),))


def _scale_bands(bands, old_h, new_h):
    out = []
    for name, a, b in bands:
        out.append((name, int(round(a * new_h / old_h)), int(round(b * new_h / old_h))))
    return tuple(out)


def resize_image(img: EncodedImage, target) -> EncodedImage:
    """Bilinear resize (half-pixel centres), clamped back into the value range."""
    H, W = (int(target[0]), int(target[1]))
    if (H, W) == (img.height, img.width):
        return img
    t = torch.from_numpy(np.ascontiguousarray(img.data))[None]
    out = F.interpolate(t, size=(H, W), mode="bilinear", align_corners=False)[0].numpy()
    out = np.clip(out, 0.0, VALUE_RANGES[img.value_range])
    return EncodedImage(out, img.value_range, _scale_bands(img.bands, img.height, H), img.layout_bands)


def vstack_images(images, value_range: str) -> EncodedImage:
    data = np.concatenate([im.data for im in images], axis=1)
    bands, layout, off, loff = [], [], 0, 0
    for im in images:
        bands += [(n, a + off, b + off) for n, a, b in im.bands]
        layout += [(n, a + loff, b + loff) for n, a, b in im.bands]
        off += im.height
        loff += im.height
    return EncodedImage(data, value_range, tuple(bands), tuple(layout))


def _check_parts(body, right, left):
    body = np.asarray(body, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    left = np.asarray(left, dtype=np.float64)
    if not (body.shape[0] == right.shape[0] == left.shape[0]):
        raise ValidationError(
            f"frame count mismatch: body {body.shape[0]}, right {right.shape[0]}, left {left.shape[0]}"
        )
    if right.shape[1:] != left.shape[1:] or right.shape[1] != HAND_JOINTS:
        raise ValidationError("hands must both be T x 21 x dims")
    return body, right, left


def body_image(body, cfg: FusionConfig) -> EncodedImage:
    body = np.asarray(body, dtype=np.float64)
    img = encode_part(normalize_part(body), cfg.value_range, "body")
    return resize_image(img, cfg.input_hw)


def hands_image(right, left, cfg: FusionConfig) -> EncodedImage:
    """42-row hands image (right above left), normalized jointly, not resized."""
    hands = normalize_part(np.concatenate([right, left], axis=1))
    img = encode_part(hands, cfg.value_range, "hands")
    return EncodedImage(img.data, cfg.value_range,
                        (("right_hand", 0, HAND_JOINTS), ("left_hand", HAND_JOINTS, NUM_HAND_ROWS)))


def compose_naive(body, right, left, cfg: FusionConfig) -> EncodedImage:
    """The unresized naive stack: body rows, then right and left hand rows."""
    body, right, left = _check_parts(body, right, left)
    b = encode_part(normalize_part(body), cfg.value_range, "body")
    return vstack_images([b, hands_image(right, left, cfg)], cfg.value_range)


def fuse_naive(body, right, left, cfg: FusionConfig) -> EncodedImage:
    return resize_image(compose_naive(body, right, left, cfg), cfg.input_hw)


def compose_scaled_stack(body, right, left, cfg: FusionConfig) -> EncodedImage:
    """Body image at full input height with an ``s * 42``-row hands image below,
    ``(H + 42 s) x W`` before the final resize."""
    body, right, left = _check_parts(body, right, left)
    W = cfg.input_hw[1]
    s = cfg.scale_s
    if not 1 <= s <= 8:
        raise ValidationError("scale_s outside [1, 8]")
    b = body_image(body, cfg)
    h = resize_image(hands_image(right, left, cfg), (s * NUM_HAND_ROWS, W))
    return vstack_images([b, h], cfg.value_range)


def fuse_scaled_stack(body, right, left, cfg: FusionConfig) -> EncodedImage:
    return resize_image(compose_scaled_stack(body, right, left, cfg), cfg.input_hw)


def build_multi_images(body, right, left, cfg: FusionConfig) -> list[EncodedImage]:
    body, right, left = _check_parts(body, right, left)
    if cfg.mode not in MULTI_MODES:
        raise ValidationError(f"{cfg.mode!r} is not a multi-image mode")
    hands = hands_image(right, left, cfg)
    out = [body_image(body, cfg)]
    if cfg.mode == "multi_image_2":
        out.append(resize_image(hands, cfg.input_hw))
    else:
        for name in ("right_hand", "left_hand"):
            a, b = hands.band(name)
            part = EncodedImage(hands.data[:, a:b], cfg.value_range, ((name, 0, b - a),))
            out.append(resize_image(part, cfg.input_hw))
    return out


def compose_sample(body, right, left, cfg: FusionConfig) -> list[EncodedImage]:
    """Images of ``cfg.mode`` before the final whole-stack resize.

    Identical to :func:`encode_sample` for modes without a final resize.
    """
    if cfg.mode == "naive_concat":
        return [compose_naive(body, right, left, cfg)]
    if cfg.mode == "scaled_stack":
        return [compose_scaled_stack(body, right, left, cfg)]
    return encode_sample(body, right, left, cfg)


def encode_sample(body, right: Optional[np.ndarray], left: Optional[np.ndarray],
                  cfg: FusionConfig) -> list[EncodedImage]:
    """Dispatch on ``cfg.mode``; always returns a list of input images."""
    if cfg.mode == "body_only":
        return [body_image(body, cfg)]
    if right is None or left is None:
        raise ValidationError(f"mode {cfg.mode!r} needs hand streams")
    if cfg.mode == "naive_concat":
        return [fuse_naive(body, right, left, cfg)]
    if cfg.mode == "scaled_stack":
        return [fuse_scaled_stack(body, right, left, cfg)]
    return build_multi_images(body, right, left, cfg)


def save_preview(img: EncodedImage, path) -> None:
    from PIL import Image

    Image.fromarray(img.to_uint8_hwc(), mode="RGB").save(path)


def with_mode(cfg: FusionConfig, mode: str) -> FusionConfig:
    return replace(cfg, mode=mode)
