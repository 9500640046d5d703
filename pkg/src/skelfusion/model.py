"""Image classifiers for encoded skeleton images.

Two families share one interface:

* ``conv_residual`` -- a ResNet (bottleneck ResNet-50 layout at full size).
* ``windowed_attention`` -- a SwinV2 hierarchy (torchvision's V2 blocks and
  patch merging) whose patch embedding is :class:`SplitPatchEmbed`, so one
  network can take several input images on disjoint channel slices.

Inputs are ``B x 3 x H x W`` for single-image classifiers and
``B x K x 3 x H x W`` for ``K``-image ones.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from functools import partial
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
from torchvision.models.swin_transformer import (
    PatchMergingV2,
    SwinTransformer,
    SwinTransformerBlockV2,
)

from .core import SkelfusionError, ValidationError
from .encode import EncodedImage

FAMILIES = ("conv_residual", "windowed_attention")
SIZES = ("tiny_test", "full")


class WeightMismatchError(SkelfusionError, ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    family: str = "windowed_attention"
    size: str = "tiny_test"
    num_classes: int = 4
    input_hw: tuple = (256, 256)
    value_range: str = "unit"
    num_inputs: int = 1
    patch_size: int = 4
    embed_channels_total: Optional[int] = None
    embed_split: Optional[tuple] = None
    window_size: int = 8
    pretrained_weights_path: Optional[str] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown backbone family {self.family!r}")
        if self.size not in SIZES:
            raise ValidationError(f"unknown backbone size {self.size!r}")
        if self.num_classes < 2:
            raise ValidationError("num_classes must be >= 2")
        object.__setattr__(self, "input_hw", tuple(int(x) for x in self.input_hw))
        if self.num_inputs < 1:
            raise ValidationError("num_inputs must be >= 1")
        if self.family == "conv_residual" and self.num_inputs != 1:
            raise ValidationError("conv_residual takes a single image; multi-image input needs windowed_attention")
        if self.embed_channels_total is None:
            object.__setattr__(self, "embed_channels_total", 12 if self.size == "tiny_test" else 96)
        if self.family == "windowed_attention":
            split = self.channel_split()
            if len(split) != self.num_inputs or sum(split) != self.embed_channels_total or min(split) <= 0:
                raise ValidationError(
                    f"embed split {split} must have {self.num_inputs} positive entries "
                    f"summing to {self.embed_channels_total}"
                )
            object.__setattr__(self, "embed_split", tuple(split))
            h, w = self.input_hw
            if h % self.patch_size or w % self.patch_size:
                raise ValidationError("input size must be divisible by patch_size")

    def channel_split(self) -> tuple:
        if self.embed_split is not None:
            return tuple(int(c) for c in self.embed_split)
        total, k = self.embed_channels_total, self.num_inputs
        if k == 1:
            return (total,)
        if k == 2:
            # body image gets two thirds of the channels, as in 64 / 32 of 96
            first = (2 * total) // 3
            return (first, total - first)
        base = total // k
        return tuple([base] * (k - 1) + [total - base * (k - 1)])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_hw"] = list(self.input_hw)
        d["embed_split"] = None if self.embed_split is None else list(self.embed_split)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        d = dict(d)
        if d.get("embed_split") is not None:
            d["embed_split"] = tuple(d["embed_split"])
        return cls(**d)


# ---------------------------------------------------------------------------
# channel-split patch embedding


class SplitPatchEmbed(nn.Module):
    """Patch-embed each input image into its own contiguous channel slice.

    Image ``i`` goes through an independent ``p x p`` / stride ``p`` linear
    projection into ``split[i]`` channels; slices are concatenated in order and
    one LayerNorm runs over all channels.  Output is channels-last:
    ``B x H/p x W/p x sum(split)``.
    """

    def __init__(self, split: Sequence[int], patch_size: int = 4, in_chans: int = 3):
        super().__init__()
        self.split = tuple(int(c) for c in split)
        if not self.split or min(self.split) <= 0:
            raise ValidationError(f"bad channel split {split}")
        self.patch_size = patch_size
        self.proj = nn.ModuleList(
            nn.Conv2d(in_chans, c, kernel_size=patch_size, stride=patch_size) for c in self.split
        )
        self.norm = nn.LayerNorm(sum(self.split), eps=1e-5)

    @property
    def embed_dim(self) -> int:
        return sum(self.split)

    def _as_list(self, images) -> list:
        if isinstance(images, torch.Tensor):
            if images.dim() == 4:
                images = images[:, None]
            if images.dim() != 5:
                raise ValidationError(f"expected B x K x C x H x W, got {tuple(images.shape)}")
            images = list(images.unbind(1))
        if len(images) != len(self.split):
            raise ValidationError(f"{len(images)} images for a {len(self.split)}-way channel split")
        shapes = {tuple(im.shape[-2:]) for im in images}
        if len(shapes) != 1:
            raise ValidationError(f"all images must share H, W; got {shapes}")
        h, w = shapes.pop()
        if h % self.patch_size or w % self.patch_size:
            raise ValidationError(f"H, W = {h}, {w} not divisible by patch size {self.patch_size}")
        return images

    def project(self, images) -> torch.Tensor:
        """Token grid before normalization."""
        images = self._as_list(images)
        parts = [proj(im) for proj, im in zip(self.proj, images)]
        return torch.cat(parts, dim=1).permute(0, 2, 3, 1)

    def forward(self, images) -> torch.Tensor:
        return self.norm(self.project(images))

    def slices(self) -> list[slice]:
        out, start = [], 0
        for c in self.split:
            out.append(slice(start, start + c))
            start += c
        return out


def split_patch_embed(images, split, patch_size: int = 4, embed: Optional[SplitPatchEmbed] = None,
                      normalize: bool = True) -> torch.Tensor:
    """Functional wrapper: token grid ``(H/p) x (W/p) x sum(split)`` per image set.

    ``images`` is a list of ``C x H x W`` arrays (one sample) or batched tensors.
    """
    tensors = [torch.as_tensor(np.asarray(im) if not isinstance(im, torch.Tensor) else im) for im in images]
    single = tensors[0].dim() == 3
    if single:
        tensors = [t[None] for t in tensors]
    if embed is None:
        embed = SplitPatchEmbed(split, patch_size, in_chans=tensors[0].shape[1]).to(tensors[0].dtype)
    elif tuple(split) != embed.split:
        raise ValidationError("split does not match the embedding module")
    with torch.no_grad():
        out = embed(tensors) if normalize else embed.project(tensors)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# residual CNN


class BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, cin, width, stride=1):
        super().__init__()
        cout = width * self.expansion
        self.conv1 = nn.Conv2d(cin, width, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        self.shortcut = _shortcut(cin, cout, stride)

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class Bottleneck(nn.Module):
    expansion = 4

    def __init__(self, cin, width, stride=1):
        super().__init__()
        cout = width * self.expansion
        self.conv1 = nn.Conv2d(cin, width, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(width)
        self.conv2 = nn.Conv2d(width, width, 3, stride, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(width)
        self.conv3 = nn.Conv2d(width, cout, 1, bias=False)
        self.bn3 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        self.shortcut = _shortcut(cin, cout, stride)

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return self.relu(out + self.shortcut(x))


def _shortcut(cin, cout, stride):
    if stride == 1 and cin == cout:
        return nn.Identity()
    return nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))


class ResNet(nn.Module):
    def __init__(self, block, depths, widths, stem, num_classes, in_chans=3):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv2d(in_chans, stem, 7, 2, 3, bias=False),
            nn.BatchNorm2d(stem),
            nn.ReLU(inplace=True),
            nn.MaxPool2d(3, 2, 1),
        )
        stages, cin = [], stem
        for i, (d, w) in enumerate(zip(depths, widths)):
            blocks = []
            for j in range(d):
                blocks.append(block(cin, w, stride=2 if (j == 0 and i > 0) else 1))
                cin = w * block.expansion
            stages.append(nn.Sequential(*blocks))
        self.stages = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(cin, num_classes)
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")

    def forward(self, x):
        x = self.stages(self.stem(x))
        return self.fc(torch.flatten(self.pool(x), 1))


# ---------------------------------------------------------------------------
# windowed attention


class SwinV2(nn.Module):
    def __init__(self, cfg: BackboneConfig, depths, heads, stochastic_depth):
        super().__init__()
        total = cfg.embed_channels_total
        w = cfg.window_size
        body = SwinTransformer(
            patch_size=[cfg.patch_size, cfg.patch_size],
            embed_dim=total,
            depths=list(depths),
            num_heads=list(heads),
            window_size=[w, w],
            stochastic_depth_prob=stochastic_depth,
            num_classes=cfg.num_classes,
            block=SwinTransformerBlockV2,
            downsample_layer=PatchMergingV2,
            norm_layer=partial(nn.LayerNorm, eps=1e-5),
        )
        # stages after the embedding are left exactly as built
        self.patch_embed = SplitPatchEmbed(cfg.channel_split(), cfg.patch_size)
        self.stages = nn.Sequential(*list(body.features.children())[1:])
        self.norm = body.norm
        self.head = body.head

    def forward(self, x):
        x = self.stages(self.patch_embed(x))
        x = self.norm(x).mean(dim=(1, 2))
        return self.head(x)


# ---------------------------------------------------------------------------
# classifier wrapper


class Classifier(nn.Module):
    def __init__(self, cfg: BackboneConfig, net: nn.Module):
        super().__init__()
        self.config = cfg
        self.net = net

    @property
    def num_inputs(self) -> int:
        return self.config.num_inputs

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        k = self.num_inputs
        H, W = self.config.input_hw
        if x.dim() == 4 and k == 1:
            x5 = x[:, None]
        elif x.dim() == 5:
            x5 = x
        else:
            raise ValidationError(f"bad input shape {tuple(x.shape)}")
        if x5.shape[1] != k or tuple(x5.shape[2:]) != (3, H, W):
            raise ValidationError(
                f"classifier expects {k} image(s) of 3 x {H} x {W}, got {tuple(x5.shape[1:])}"
            )
        if self.config.family == "conv_residual":
            return self.net(x5[:, 0])
        return self.net(x5)


def build_backbone(cfg: BackboneConfig) -> Classifier:
    """Construct a classifier; loads ``cfg.pretrained_weights_path`` when set.

    Seed the global torch RNG beforehand for reproducible initialization.
    """
    tiny = cfg.size == "tiny_test"
    if cfg.family == "conv_residual":
        if tiny:
            net = ResNet(BasicBlock, [1, 1], [8, 8], stem=8, num_classes=cfg.num_classes)
        else:
            net = ResNet(Bottleneck, [3, 4, 6, 3], [64, 128, 256, 512], stem=64, num_classes=cfg.num_classes)
    else:
        if tiny:
            net = SwinV2(cfg, depths=(2, 2), heads=(2, 4), stochastic_depth=0.0)
        else:
            net = SwinV2(cfg, depths=(2, 2, 6, 2), heads=(3, 6, 12, 24), stochastic_depth=0.2)
    model = Classifier(cfg, net)
    if cfg.pretrained_weights_path:
        load_weights(model, cfg.pretrained_weights_path, check_config=False)
    return model


def _config_echo(cfg: BackboneConfig) -> dict:
    d = cfg.to_dict()
    d.pop("pretrained_weights_path", None)
    return d


def save_weights(model: Classifier, path) -> None:
    """Write an ``.npz`` archive: config echo under ``__config__`` plus one array per tensor."""
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    arrays["__config__"] = np.frombuffer(json.dumps(_config_echo(model.config), sort_keys=True).encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_weights(model: Classifier, path, check_config: bool = True) -> None:
    """Load an archive written by :func:`save_weights`, refusing any mismatch.

    With ``check_config=False`` only the parameter names and shapes must
    agree (so weights may be reused, e.g., for a different learning rate).
    """
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise WeightMismatchError(f"cannot read weights {path}: {e}") from None
    with archive:
        if "__config__" not in archive.files:
            raise WeightMismatchError(f"{path}: no config echo")
        saved_cfg = json.loads(archive["__config__"].tobytes().decode())
        if check_config and saved_cfg != _config_echo(model.config):
            raise WeightMismatchError(f"{path}: config mismatch: {saved_cfg} vs {_config_echo(model.config)}")
        state = model.state_dict()
        names = set(archive.files) - {"__config__"}
        if names != set(state):
            missing = sorted(set(state) - names)[:5]
            extra = sorted(names - set(state))[:5]
            raise WeightMismatchError(f"{path}: parameter names differ (missing {missing}, unexpected {extra})")
        new_state = {}
        for k, v in state.items():
            arr = archive[k]
            if tuple(arr.shape) != tuple(v.shape):
                raise WeightMismatchError(f"{path}: {k} has shape {arr.shape}, expected {tuple(v.shape)}")
            new_state[k] = torch.from_numpy(arr).to(v.dtype)
    model.load_state_dict(new_state)


def images_to_tensor(samples, dtype=torch.float32) -> torch.Tensor:
    """Stack a list of samples (each a list of :class:`EncodedImage`) into ``B x K x 3 x H x W``."""
    arr = np.stack([np.stack([im.data for im in sample]) for sample in samples])
    return torch.from_numpy(arr).to(dtype)


def forward(classifier: Classifier, images) -> np.ndarray:
    """Inference-mode logits.

    ``images`` is one sample (list of :class:`EncodedImage`) or a batch (list of
    such lists).  Returns ``num_classes`` logits or ``B x num_classes``.
    """
    single = bool(images) and isinstance(images[0], EncodedImage)
    batch = [images] if single else images
    for sample in batch:
        if len(sample) != classifier.num_inputs:
            raise ValidationError(f"classifier takes {classifier.num_inputs} image(s), got {len(sample)}")
    dtype = next(classifier.parameters()).dtype
    x = images_to_tensor(batch, dtype)
    was_training = classifier.training
    classifier.eval()
    with torch.no_grad():
        logits = classifier(x).cpu().numpy()
    classifier.train(was_training)
    if not np.all(np.isfinite(logits)):
        raise SkelfusionError("non-finite logits")
    return logits[0] if single else logits
