import dataclasses
import json
import math

import numpy as np
import pytest
import torch

from skelfusion.core import ValidationError
from skelfusion.encode import FusionConfig
from skelfusion.model import BackboneConfig
from skelfusion.train import (
    EmptySplitError, ExperimentGrid, RunResult, ScheduleDomainError, TrainConfig, build_split_data,
    load_summary, one_cycle_lr, reevaluate_run, run_experiment, select_best_epoch, train_model,
)

# torch.optim.lr_scheduler.OneCycleLR at max_lr=1e-3 over 37 steps (peak at step 3,
# div_factor=25, final_div_factor=400): linear-strategy warmup, cos-strategy decay
TORCH_ONE_CYCLE_37 = [
    4e-05, 0.00035999999999999997, 0.0006799999999999999, 0.001,
    0.0009977361876904137, 0.0009909652521964902, 0.000979748512158568, 0.0009641875481113854,
    0.0009444232825550289, 0.000920634703738949, 0.0008930372447166565, 0.0008618808323506297,
    0.0008274476239359453, 0.0007900494519401204, 0.000750025, 0.0007077367357502931,
    0.0006635676282605449, 0.0006179176798079382, 0.0005712003033947289, 0.00052383857881608,
    0.00047626142118392006, 0.00042889969660527113, 0.0003821823201920618, 0.00033653237173945504,
    0.00029236326424970693, 0.0002500750000000001, 0.00021005054805987953, 0.00017265237606405476,
    0.00013821916764937016, 0.00010706275528334349, 7.94652962610509e-05, 5.567671744497106e-05,
    3.5912451888614525e-05, 2.0351487841432095e-05, 9.134747803509783e-06, 2.3638123095863596e-06,
    1.0000000000000001e-07,
]


def test_schedule_matches_reference():
    got = [one_cycle_lr(i, 37, 1e-3) for i in range(37)]
    np.testing.assert_allclose(got, TORCH_ONE_CYCLE_37, rtol=1e-12)


def _torch_one_cycle(T, max_lr, strategy):
    p = torch.nn.Parameter(torch.zeros(1))
    opt = torch.optim.SGD([p], lr=max_lr)
    peak = math.floor(0.1 * T)
    sched = torch.optim.lr_scheduler.OneCycleLR(
        opt, max_lr=max_lr, total_steps=T, pct_start=(peak + 1) / T, anneal_strategy=strategy,
        div_factor=25, final_div_factor=1e4 / 25, three_phase=False, cycle_momentum=False)
    out = []
    for _ in range(T):
        out.append(opt.param_groups[0]["lr"])
        opt.step()
        sched.step()
    return out


def torch_reference(T, max_lr):
    """torch applies one anneal function to both phases: take the warmup from
    its linear variant and the decay from its cosine variant."""
    peak = math.floor(0.1 * T)
    return _torch_one_cycle(T, max_lr, "linear")[:peak + 1] + _torch_one_cycle(T, max_lr, "cos")[peak + 1:]


@pytest.mark.parametrize("T", [11, 37, 100, 1000])
def test_schedule_matches_torch_live(T):
    got = [one_cycle_lr(i, T, 5e-4) for i in range(T)]
    np.testing.assert_allclose(got, torch_reference(T, 5e-4), rtol=1e-12)


@pytest.mark.parametrize("T", [10, 11, 99, 270, 1001])
def test_schedule_shape(T):
    max_lr = 2e-3
    lrs = np.array([one_cycle_lr(i, T, max_lr) for i in range(T)])
    peak = math.floor(0.1 * T)
    assert lrs[peak] == max_lr
    assert lrs[0] == pytest.approx(max_lr / 25, rel=1e-9)
    assert lrs[-1] == pytest.approx(max_lr / 1e4, rel=1e-9)
    d = np.diff(lrs)
    assert np.all(d[:peak] >= 0) and np.all(d[peak:] <= 0)
    # warmup climbs (1 - 1/25) max_lr in `peak` steps; annealing stays within 2 max_lr / T
    assert np.all(np.abs(d[:peak]) <= max_lr / peak + 1e-18)
    assert np.all(np.abs(d[peak:]) <= 2 * max_lr / T)


def test_schedule_domain():
    for step in (-1, 10):
        with pytest.raises(ScheduleDomainError):
            one_cycle_lr(step, 10, 1e-3)


def test_best_epoch():
    assert select_best_epoch([0.2, 0.9, 0.5]) == 2
    assert select_best_epoch([0.5, 0.5]) == 1
    assert select_best_epoch([0.5, 0.9, 0.9], [1.0, 0.4, 0.3]) == 3
    assert select_best_epoch([0.9, 0.9], [0.3, 0.3]) == 1
    assert select_best_epoch([0.9, 0.9], [float("nan"), 0.5]) == 2


def test_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(warmup_frac=0)
    with pytest.raises(ValidationError):
        TrainConfig(max_lr=0)
    with pytest.raises(ValidationError):
        TrainConfig(best_epoch_metric="loss")


def test_config_roundtrip():
    cfg = TrainConfig(fusion=FusionConfig("multi_image_2", input_hw=(64, 64)))
    assert TrainConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


def _cfg(mode="body_only", family="conv_residual", **kw):
    return TrainConfig(epochs=kw.pop("epochs", 2), max_lr=kw.pop("max_lr", 1e-3), batch_size=8,
                       fusion=FusionConfig(mode, input_hw=(32, 32)),
                       backbone=BackboneConfig(family=family), **kw)


@pytest.fixture(scope="module")
def data_cache(small_dataset):
    cache = {}

    def get(cfg):
        key = (cfg.fusion, cfg.body_dims, cfg.hand_dims)
        if key not in cache:
            cache[key] = build_split_data(small_dataset, cfg)
        return cache[key]

    return get


def test_train_deterministic(small_dataset, data_cache):
    cfg = _cfg("multi_image_2", "windowed_attention")
    a = train_model(cfg, small_dataset, data=data_cache(cfg))
    b = train_model(cfg, small_dataset, data=data_cache(cfg))
    assert a.status == "ok"
    assert a.to_dict() == b.to_dict()
    assert len(a.per_epoch) == 2 and 1 <= a.best_epoch <= 2
    vals = [e["val_mAcc"] for e in a.per_epoch]
    assert vals[a.best_epoch - 1] == max(vals)


def test_confusion_rows_match_test_counts(small_dataset, data_cache):
    cfg = _cfg()
    r = train_model(cfg, small_dataset, data=data_cache(cfg))
    counts = np.bincount(data_cache(cfg)["test"].y.numpy(), minlength=4)
    np.testing.assert_array_equal(np.asarray(r.confusion).sum(axis=1), counts)


def test_divergence_is_recorded(small_dataset, data_cache, tmp_path):
    cfg = _cfg(family="windowed_attention", max_lr=1e12)
    r = train_model(cfg, small_dataset, run_dir=tmp_path, data=data_cache(cfg))
    assert r.status == "failed"
    assert r.test_mAcc is None and "non-finite" in r.message
    assert json.loads((tmp_path / "result.json").read_text())["status"] == "failed"


def test_reevaluate_best_weights(small_dataset, data_cache, tmp_path):
    cfg = _cfg("scaled_stack", epochs=3)
    r = train_model(cfg, small_dataset, run_dir=tmp_path, data=data_cache(cfg))
    for name in ("config.json", "epochs.jsonl", "best.npz", "result.json"):
        assert (tmp_path / name).is_file()
    assert len((tmp_path / "epochs.jsonl").read_text().splitlines()) == 3
    again = reevaluate_run(tmp_path, small_dataset)
    assert abs(again["mAcc"] - r.test_mAcc) <= 1e-6
    assert abs(again["top1"] - r.test_top1) <= 1e-6


def test_empty_split(small_dataset):
    m = dataclasses.replace(small_dataset, clips=tuple(c for c in small_dataset.clips if c.split != "val"))
    with pytest.raises(EmptySplitError):
        build_split_data(m, _cfg())


# experiment driver

def _stub(fail_lr=None):
    calls = []

    def fn(cfg, manifest, run_dir=None, data=None):
        calls.append(cfg)
        if cfg.max_lr == fail_lr and cfg.seed == calls[0].seed:
            r = RunResult([], None, None, None, None, cfg.to_dict(), cfg.seed, "failed", "non-finite loss")
        else:
            v = 0.5 + (cfg.seed % 100) / 1000
            r = RunResult([{"epoch": 1, "train_loss": 1.0, "val_mAcc": v, "val_top1": v}], 1, v, v,
                          [[1]], cfg.to_dict(), cfg.seed)
        if run_dir is not None:
            run_dir.mkdir(parents=True, exist_ok=True)
            (run_dir / "result.json").write_text(json.dumps(r.to_dict()))
        return r

    fn.calls = calls
    return fn


LRS = (5e-3, 2.5e-3, 1e-3, 5e-4, 1e-4)


def test_experiment_counts(small_dataset, tmp_path):
    fn = _stub(fail_lr=5e-3)
    grid = ExperimentGrid(_cfg(epochs=1), LRS, repeats=3)
    s = run_experiment(grid, small_dataset, tmp_path, train_fn=fn)
    assert len(s.runs) == 15 and len(fn.calls) == 15
    assert len({c.seed for c in fn.calls}) == 15
    assert s.failures == 1
    assert s.box["test_mAcc"].n == 14
    index = json.loads((tmp_path / "index.json").read_text())
    assert len(index["runs"]) == 15 and index["failures"] == 1
    assert sum(1 for p in tmp_path.iterdir() if p.is_dir()) == 15


def test_experiment_resumes(small_dataset, tmp_path):
    grid = ExperimentGrid(_cfg(epochs=1), LRS, repeats=3)
    first = run_experiment(grid, small_dataset, tmp_path, train_fn=_stub())
    # drop two runs; only those are retrained
    for d in sorted(p for p in tmp_path.iterdir() if p.is_dir())[:2]:
        (d / "result.json").unlink()
    fn = _stub()
    second = run_experiment(grid, small_dataset, tmp_path, train_fn=fn)
    assert len(fn.calls) == 2
    assert [r.to_dict() for r in second.runs] == [r.to_dict() for r in first.runs]
    loaded = load_summary(tmp_path)
    assert loaded.box["test_mAcc"] == second.box["test_mAcc"]


def test_experiment_identical_metric(small_dataset):
    def fn(cfg, manifest, run_dir=None, data=None):
        return RunResult([], 1, 0.7, 0.8, [[1]], {}, cfg.seed)

    s = run_experiment(ExperimentGrid(_cfg(epochs=1), LRS, 3), small_dataset, None, train_fn=fn)
    b = s.box["test_mAcc"]
    assert b.min == b.q1 == b.median == b.q3 == b.max == 0.7


def test_experiment_real_training(small_dataset, tmp_path):
    grid = ExperimentGrid(_cfg(epochs=1), LRS[:2], repeats=1)
    s = run_experiment(grid, small_dataset, tmp_path)
    assert len(s.runs) == 2 and all(r.status == "ok" for r in s.runs)
    assert all((tmp_path / p.name / "best.npz").is_file() for p in tmp_path.iterdir() if p.is_dir())


def test_grid_validation():
    with pytest.raises(ValidationError):
        ExperimentGrid(TrainConfig(), (), 3)
    with pytest.raises(ValidationError):
        ExperimentGrid(TrainConfig(), (1e-3, -1.0), 3)
