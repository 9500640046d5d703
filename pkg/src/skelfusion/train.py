"""Training loop, one-cycle schedule and the learning-rate grid experiment driver.

Run directory layout (one per training)::

    config.json     config echo
    epochs.jsonl    one line per epoch: epoch, train_loss, val_mAcc, val_top1, val_loss, lr
    best.npz        weights of the selected epoch
    result.json     the final RunResult

An experiment directory holds one run directory per (learning rate, repeat)
and an ``index.json`` listing them.
"""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .core import SkelfusionError, ValidationError
from .encode import FusionConfig, encode_sample
from .handprep import HandSelectConfig, hands_to_arrays, prepare_hands
from .ingest import DatasetManifest, load_clip, load_manifest, project_points
from .model import BackboneConfig, Classifier, build_backbone, load_weights, save_weights
from .report import boxplot_stats, confusion_matrix, mean_class_accuracy, top1_accuracy

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (5e-3, 2.5e-3, 1e-3, 5e-4, 1e-4, 5e-5)
METRICS = ("test_mAcc", "test_top1")


class EmptySplitError(SkelfusionError, ValueError):
    pass


class ScheduleDomainError(SkelfusionError, ValueError):
    pass


def one_cycle_lr(step: int, total_steps: int, max_lr: float, warmup_frac: float = 0.1,
                 start_div: float = 25.0, final_div: float = 1e4) -> float:
    """Learning rate at ``step`` of a one-cycle schedule.

    Linear ramp from ``max_lr / start_div`` at step 0 to ``max_lr`` at step
    ``floor(warmup_frac * total_steps)``, then cosine annealing down to
    ``max_lr / final_div`` at the last step.
    """
    if total_steps < 1 or not 0 <= step < total_steps:
        raise ScheduleDomainError(f"step {step} outside [0, {total_steps})")
    peak = math.floor(warmup_frac * total_steps)
    last = total_steps - 1
    if step == peak:
        return float(max_lr)
    if step < peak:
        lo = max_lr / start_div
        return lo + (max_lr - lo) * step / peak
    lo = max_lr / final_div
    frac = (step - peak) / (last - peak)
    return lo + (max_lr - lo) * 0.5 * (1.0 + math.cos(math.pi * frac))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    max_lr: float = 1e-3
    warmup_frac: float = 0.1
    start_div: float = 25.0
    final_div: float = 1e4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    grad_clip_norm: Optional[float] = 1.0
    batch_size: int = 16
    seed: int = 0
    best_epoch_metric: str = "val_mAcc"
    body_dims: int = 3
    hand_dims: int = 3
    fusion: FusionConfig = field(default_factory=FusionConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    hands: HandSelectConfig = field(default_factory=HandSelectConfig)

    def __post_init__(self):
        if not 0 < self.warmup_frac < 1:
            raise ValidationError("warmup_frac must lie in (0, 1)")
        if not self.max_lr > 0:
            raise ValidationError("max_lr must be positive")
        if self.grad_clip_norm is not None and not self.grad_clip_norm > 0:
            raise ValidationError("grad_clip_norm must be positive or None")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be positive")
        if self.best_epoch_metric not in ("val_mAcc", "val_top1"):
            raise ValidationError("best_epoch_metric must be val_mAcc or val_top1")
        if self.body_dims not in (2, 3) or self.hand_dims not in (2, 3):
            raise ValidationError("body_dims and hand_dims must be 2 or 3")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fusion"]["input_hw"] = list(self.fusion.input_hw)
        d["backbone"] = self.backbone.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["fusion"] = FusionConfig(**{**d.get("fusion", {}), "input_hw": tuple(d.get("fusion", {}).get("input_hw", (224, 224)))})
        d["backbone"] = BackboneConfig.from_dict(d.get("backbone", {}))
        d["hands"] = HandSelectConfig(**d.get("hands", {}))
        return cls(**d)

    @property
    def group(self) -> str:
        label = f"{self.body_dims}D body"
        if self.fusion.mode != "body_only":
            label += f" + {self.hand_dims}D hand"
        return label

    def resolved_backbone(self, num_classes: int) -> BackboneConfig:
        """Backbone config with input geometry taken from the fusion config."""
        return replace(
            self.backbone,
            num_classes=num_classes,
            input_hw=self.fusion.input_hw,
            value_range=self.fusion.value_range,
            num_inputs=self.fusion.num_images,
            embed_split=(self.backbone.embed_split
                         if self.backbone.embed_split is not None
                         and len(self.backbone.embed_split) == self.fusion.num_images else None),
        )


@dataclass
class RunResult:
    per_epoch: list
    best_epoch: Optional[int]
    test_mAcc: Optional[float]
    test_top1: Optional[float]
    confusion: Optional[list]
    config_echo: dict
    seed: int
    status: str = "ok"
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunResult":
        return cls(**d)


# ---------------------------------------------------------------------------
# data


@dataclass
class SplitData:
    x: torch.Tensor  # N x K x 3 x H x W
    y: torch.Tensor  # N


def clip_arrays(clip, manifest: DatasetManifest, cfg: TrainConfig):
    """Body and (if the fusion mode needs them) hand arrays for one clip."""
    body = clip.body_array()
    intr = manifest.intrinsics.get(clip.view_id)
    needs_intr = body.shape[2] == 3 and (cfg.body_dims == 2 or cfg.fusion.mode != "body_only")
    if needs_intr and intr is None:
        raise ValidationError(f"clip {clip.clip_id}: view {clip.view_id!r} has no intrinsics")
    if cfg.body_dims == 2 and body.shape[2] == 3:
        body = project_points(body, intr)
    elif cfg.body_dims == 3 and body.shape[2] != 3:
        raise ValidationError(f"clip {clip.clip_id}: 3D body requested but data is 2D")
    if cfg.fusion.mode == "body_only":
        return body, None, None
    hand_frames = clip.hand_frames
    if hand_frames is None or hand_frames[0].right is None or hand_frames[0].right.shape[1] != cfg.hand_dims:
        hand_frames, _ = prepare_hands(clip, cfg.hands, dims=cfg.hand_dims, intrinsics=intr)
    right, left = hands_to_arrays(hand_frames)
    return body, right, left


def build_split_data(manifest: DatasetManifest, cfg: TrainConfig) -> dict[str, SplitData]:
    out = {}
    for split in ("train", "val", "test"):
        ids = manifest.split_ids(split)
        if not ids:
            raise EmptySplitError(f"split {split!r} is empty")
        xs, ys = [], []
        for cid in ids:
            clip = load_clip(manifest, cid)
            images = encode_sample(*clip_arrays(clip, manifest, cfg), cfg.fusion)
            xs.append(np.stack([im.data for im in images]))
            ys.append(clip.label)
        out[split] = SplitData(torch.from_numpy(np.stack(xs)).float(), torch.tensor(ys, dtype=torch.long))
    return out


# ---------------------------------------------------------------------------
# training


def predict_logits(model: Classifier, x: torch.Tensor, batch_size: int = 64) -> torch.Tensor:
    model.eval()
    with torch.no_grad():
        return torch.cat([model(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])


def predict(model: Classifier, x: torch.Tensor, batch_size: int = 64) -> np.ndarray:
    return predict_logits(model, x, batch_size).argmax(dim=1).numpy()


def evaluate(model: Classifier, data: SplitData, num_classes: int) -> dict:
    logits = predict_logits(model, data.x)
    preds = logits.argmax(dim=1).numpy()
    labels = data.y.numpy()
    return {
        "mAcc": mean_class_accuracy(preds, labels, num_classes),
        "top1": top1_accuracy(preds, labels),
        "loss": float(F.cross_entropy(logits, data.y)),
        "confusion": confusion_matrix(preds, labels, num_classes),
    }


def _epoch_key(value: float, loss: Optional[float]):
    return (value, -loss if loss is not None and math.isfinite(loss) else -math.inf)


def select_best_epoch(values: Sequence[float], losses: Optional[Sequence[float]] = None) -> int:
    """1-based index of the best value.

    Ties go to the lower validation loss when ``losses`` is given, then to the
    earliest epoch.
    """
    if not values:
        raise ValidationError("no epochs to choose from")
    if losses is None:
        losses = [None] * len(values)
    keys = [_epoch_key(float(v), l) for v, l in zip(values, losses)]
    return max(range(len(keys)), key=lambda i: (keys[i], -i)) + 1


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def train_model(cfg: TrainConfig, manifest: DatasetManifest, run_dir=None,
                data: Optional[dict] = None) -> RunResult:
    """Train one model, pick the best validation epoch and test it.

    A non-finite training loss ends the run with ``status="failed"``.
    """
    num_classes = manifest.num_classes
    if data is None:
        data = build_split_data(manifest, cfg)
    for split in ("train", "val", "test"):
        if split not in data or len(data[split].y) == 0:
            raise EmptySplitError(f"split {split!r} is empty")

    bcfg = cfg.resolved_backbone(num_classes)
    echo = cfg.to_dict()
    echo["backbone"] = bcfg.to_dict()
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        _write_json(run_dir / "config.json", echo)
        epochs_file = open(run_dir / "epochs.jsonl", "w")
    else:
        epochs_file = None

    torch.manual_seed(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    model = build_backbone(bcfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.max_lr / cfg.start_div,
                           betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)

    train = data["train"]
    n = len(train.y)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    metric_key = cfg.best_epoch_metric
    per_epoch, best_state, best_key = [], None, None
    status, message, step = "ok", "", 0

    try:
        for epoch in range(1, cfg.epochs + 1):
            model.train()
            order = torch.randperm(n, generator=gen)
            losses = []
            for i in range(0, n, cfg.batch_size):
                idx = order[i:i + cfg.batch_size]
                lr = one_cycle_lr(step, total_steps, cfg.max_lr, cfg.warmup_frac, cfg.start_div, cfg.final_div)
                for g in opt.param_groups:
                    g["lr"] = lr
                loss = F.cross_entropy(model(train.x[idx]), train.y[idx])
                if not torch.isfinite(loss):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                if cfg.grad_clip_norm is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
                opt.step()
                losses.append(loss.item())
                step += 1
            if not all(torch.isfinite(p).all() for p in model.parameters()):
                raise FloatingPointError(f"non-finite weights after epoch {epoch}")
            val = evaluate(model, data["val"], num_classes)
            rec = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_mAcc": val["mAcc"],
                   "val_top1": val["top1"], "val_loss": val["loss"], "lr": lr}
            per_epoch.append(rec)
            if epochs_file is not None:
                epochs_file.write(json.dumps(rec, sort_keys=True) + "\n")
                epochs_file.flush()
            key = _epoch_key(rec[metric_key], rec["val_loss"])
            if best_key is None or key > best_key:
                best_key = key
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
            log.debug("epoch %d loss %.4f val mAcc %.3f", epoch, rec["train_loss"], rec["val_mAcc"])
    except FloatingPointError as e:
        status, message = "failed", str(e)
    finally:
        if epochs_file is not None:
            epochs_file.close()

    if status == "failed":
        result = RunResult(per_epoch, None, None, None, None, echo, cfg.seed, status, message)
    else:
        best_epoch = select_best_epoch([r[metric_key] for r in per_epoch], [r["val_loss"] for r in per_epoch])
        model.load_state_dict(best_state)
        test = evaluate(model, data["test"], num_classes)
        if run_dir is not None:
            save_weights(model, run_dir / "best.npz")
        result = RunResult(per_epoch, best_epoch, test["mAcc"], test["top1"],
                           test["confusion"].tolist(), echo, cfg.seed)
    if run_dir is not None:
        _write_json(run_dir / "result.json", result.to_dict())
    return result


def load_run(run_dir) -> RunResult:
    return RunResult.from_dict(json.loads((Path(run_dir) / "result.json").read_text()))


def reevaluate_run(run_dir, manifest: DatasetManifest, data: Optional[dict] = None) -> dict:
    """Re-test the stored best weights of a run directory."""
    run_dir = Path(run_dir)
    cfg_echo = json.loads((run_dir / "config.json").read_text())
    cfg = TrainConfig.from_dict(cfg_echo)
    if data is None:
        data = build_split_data(manifest, cfg)
    model = build_backbone(BackboneConfig.from_dict(cfg_echo["backbone"]))
    load_weights(model, run_dir / "best.npz")
    return evaluate(model, data["test"], manifest.num_classes)


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class ExperimentGrid:
    base_cfg: TrainConfig
    max_lrs: tuple = DEFAULT_LR_GRID
    repeats: int = 3

    def __post_init__(self):
        object.__setattr__(self, "max_lrs", tuple(float(x) for x in self.max_lrs))
        if not self.max_lrs or self.repeats < 1:
            raise ValidationError("experiment grid must be nonempty")
        if any(lr <= 0 for lr in self.max_lrs):
            raise ValidationError("learning rates must be positive")


@dataclass
class ExperimentSummary:
    family: str
    mode: str
    group: str
    runs: list
    run_dirs: list = field(default_factory=list)
    box: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.family, self.group, self.mode)

    @property
    def failures(self) -> int:
        return sum(r.status != "ok" for r in self.runs)

    @property
    def ok_runs(self) -> list:
        return [r for r in self.runs if r.status == "ok"]


def summarize(runs, family, mode, group, run_dirs=()) -> ExperimentSummary:
    s = ExperimentSummary(family, mode, group, list(runs), [str(d) for d in run_dirs])
    for metric in METRICS:
        vals = [getattr(r, metric) for r in s.ok_runs]
        if vals:
            s.box[metric] = boxplot_stats(vals)
    return s


def derive_seed(base_seed: int, lr_index: int, repeat: int) -> int:
    return int(np.random.SeedSequence([base_seed, lr_index, repeat]).generate_state(1)[0] % (2**31 - 1))


def experiment_name(cfg: TrainConfig) -> str:
    slug = re.sub(r"[^a-z0-9]+", "", cfg.group.lower().replace("+", "_"))
    return f"{cfg.backbone.family}-{slug}-{cfg.fusion.mode}"


def _run_job(args):
    cfg, manifest_path, run_dir = args
    manifest = load_manifest(manifest_path)
    return train_model(cfg, manifest, run_dir).to_dict()


def run_experiment(grid: ExperimentGrid, manifest: DatasetManifest, out_dir=None,
                   train_fn: Optional[Callable] = None, jobs: int = 1) -> ExperimentSummary:
    """Train every (learning rate, repeat) combination and aggregate the results.

    Completed run directories (with ``result.json``) are loaded instead of
    retrained.  Diverged runs stay in the summary as failures.  ``train_fn``
    replaces :func:`train_model` (same signature plus ``data``).
    """
    base = grid.base_cfg
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    plan = []
    seeds = set()
    for i, lr in enumerate(grid.max_lrs):
        for r in range(grid.repeats):
            seed = derive_seed(base.seed, i, r)
            while seed in seeds:
                seed += 1
            seeds.add(seed)
            cfg = replace(base, max_lr=lr, seed=seed)
            run_dir = out_dir / f"lr{i:02d}_{lr:g}_rep{r}" if out_dir is not None else None
            plan.append((cfg, run_dir))

    results: list[Optional[RunResult]] = [None] * len(plan)
    todo = []
    for k, (cfg, run_dir) in enumerate(plan):
        if run_dir is not None and (run_dir / "result.json").is_file():
            results[k] = load_run(run_dir)
            log.info("skipping completed run %s", run_dir)
        else:
            todo.append(k)

    if todo:
        if jobs > 1 and train_fn is None and manifest.path is not None:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                args = [(plan[k][0], manifest.path, plan[k][1]) for k in todo]
                for k, res in zip(todo, pool.map(_run_job, args)):
                    results[k] = RunResult.from_dict(res)
        else:
            data = build_split_data(manifest, base)
            fn = train_fn or train_model
            for k in todo:
                cfg, run_dir = plan[k]
                results[k] = fn(cfg, manifest, run_dir, data=data)
                log.info("run %d/%d lr=%g seed=%d status=%s", k + 1, len(plan), cfg.max_lr, cfg.seed,
                         results[k].status)

    run_dirs = [str(d) for _, d in plan] if out_dir is not None else []
    summary = summarize(results, base.backbone.family, base.fusion.mode, base.group, run_dirs)
    if out_dir is not None:
        index = {
            "family": summary.family, "mode": summary.mode, "group": summary.group,
            "runs": [{"dir": Path(d).name, "max_lr": c.max_lr, "seed": c.seed, "status": r.status}
                     for (c, d), r in zip(plan, results)],
            "failures": summary.failures,
            "box": {m: b.as_dict() for m, b in summary.box.items()},
        }
        _write_json(out_dir / "index.json", index)
    return summary


def load_summary(exp_dir) -> ExperimentSummary:
    """Rebuild an :class:`ExperimentSummary` from persisted run directories."""
    exp_dir = Path(exp_dir)
    index = json.loads((exp_dir / "index.json").read_text())
    dirs = [exp_dir / r["dir"] for r in index["runs"]]
    runs = [load_run(d) for d in dirs]
    return summarize(runs, index["family"], index["mode"], index["group"], dirs)
