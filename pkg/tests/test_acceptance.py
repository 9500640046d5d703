"""Acceptance criteria, one test each.

Every test prints a single ``PASS``/``FAIL`` line with the measured numbers
(visible with ``pytest -v``, no ``-s`` needed) and then asserts.
"""

import dataclasses
import filecmp
import math
import statistics
from fractions import Fraction

import numpy as np
import pytest
import torch

from skelfusion.encode import MODES, FusionConfig, compose_naive, compose_sample, compose_scaled_stack, fuse_naive, fuse_scaled_stack
from skelfusion.handprep import HandSelectConfig, select_hand_indices
from skelfusion.ingest import generate_synthetic_dataset
from skelfusion.model import BackboneConfig, SplitPatchEmbed, build_backbone
from skelfusion.report import confusion_matrix, mean_class_accuracy, render_report, top1_accuracy
from skelfusion.train import ExperimentGrid, TrainConfig, build_split_data, one_cycle_lr, run_experiment, train_model

from conftest import brute_force_selection, finite_difference_check, make_detection, naive_metrics


@pytest.fixture
def verdict(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, detail
    return emit


def _parts(T=24, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(0, 1, (T, 32, 3)), rng.normal(0, 0.05, (T, 21, 3)), rng.normal(0, 0.05, (T, 21, 3))


def _expected_bands(layout, new_h):
    old_h = layout[-1][2]
    return tuple((n, int(round(a * new_h / old_h)), int(round(b * new_h / old_h))) for n, a, b in layout)


def test_layout_oracle(verdict):
    body, right, left = _parts()
    problems = []
    naive_frac = None
    for H in (224, 256):
        cfg = FusionConfig("naive_concat", input_hw=(H, H))
        comp = compose_naive(body, right, left, cfg)
        layout = (("body", 0, 32), ("right_hand", 32, 53), ("left_hand", 53, 74))
        if comp.bands != layout:
            problems.append(f"naive layout {comp.bands}")
        out = fuse_naive(body, right, left, cfg)
        naive_frac = Fraction(out.layout_bands[0][2], out.layout_bands[-1][2])
        if naive_frac != Fraction(32, 74) or out.layout_fraction("body") != 32 / 74:
            problems.append(f"naive body fraction {naive_frac} at H={H}")
        if out.data.shape != (3, H, H) or out.bands != _expected_bands(layout, H):
            problems.append(f"naive final bands {out.bands} at H={H}")
        for s in range(1, 9):
            cfg = FusionConfig("scaled_stack", scale_s=s, input_hw=(H, H))
            comp = compose_scaled_stack(body, right, left, cfg)
            layout = (("body", 0, H), ("right_hand", H, H + 21 * s), ("left_hand", H + 21 * s, H + 42 * s))
            if comp.bands != layout or comp.data.shape != (3, H + 42 * s, H):
                problems.append(f"scaled layout {comp.bands} at H={H}, s={s}")
            out = fuse_scaled_stack(body, right, left, cfg)
            if out.layout_fraction("body") != H / (H + 42 * s):
                problems.append(f"scaled body fraction at H={H}, s={s}")
            if out.data.shape != (3, H, H) or out.bands != _expected_bands(layout, H):
                problems.append(f"scaled final bands {out.bands} at H={H}, s={s}")
    verdict("layout oracle", not problems,
            f"naive body fraction {naive_frac} = {float(naive_frac):.4f}; scaled H/(H+42s) for s=1..8, "
            f"H in (224, 256); {len(problems)} mismatches {problems[:3]}")


def test_independent_normalization(verdict):
    body, right, left = _parts(seed=1)
    checked, bad = 0, []
    for mode in MODES:
        for H in (224, 256):
            cfg = FusionConfig(mode, input_hw=(H, H))
            ref = compose_sample(body, right, left, cfg)[0]
            a, b = ref.band("body")
            for lam in (0.1, 10.0):
                img = compose_sample(body, lam * right, lam * left, cfg)[0]
                checked += 1
                if not np.array_equal(img.data[:, a:b], ref.data[:, a:b]):
                    bad.append((mode, H, lam))
    verdict("independent normalization", not bad,
            f"{checked} (mode, H, lambda) cases bit-exact on the body band; failures {bad}")


def test_channel_slice_isolation(verdict):
    worst_outside, min_inside, cases = 0.0, math.inf, 0
    for split in ((64, 32), (32, 32, 32)):
        torch.manual_seed(0)
        emb = SplitPatchEmbed(split).double()
        rng = np.random.default_rng(2)
        imgs = [torch.tensor(rng.random((2, 3, 32, 32))) for _ in split]
        base = emb.project(imgs)
        for j, sl in enumerate(emb.slices()):
            pert = list(imgs)
            pert[j] = imgs[j] + torch.tensor(rng.normal(0, 1, (2, 3, 32, 32)))
            diff = (emb.project(pert) - base).abs()
            mask = torch.ones(diff.shape[-1], dtype=torch.bool)
            mask[sl] = False
            worst_outside = max(worst_outside, diff[..., mask].max().item())
            min_inside = min(min_inside, diff[..., sl].max().item())
            cases += 1
    verdict("channel-slice isolation", worst_outside == 0.0 and min_inside > 0.0,
            f"splits [64,32] and [32,32,32], {cases} perturbations; max change outside slice "
            f"{worst_outside}, smallest max change inside {min_inside:.3g}")


GRAD_CASES = [("conv_residual", 1), ("windowed_attention", 1), ("windowed_attention", 2), ("windowed_attention", 3)]


def test_gradient_check(verdict):
    lines, ok = [], True
    for family, k in GRAD_CASES:
        torch.manual_seed(0)
        m = build_backbone(BackboneConfig(family=family, input_hw=(32, 32), num_inputs=k))
        x = torch.rand(4, k, 3, 32, 32) if k > 1 else torch.rand(4, 3, 32, 32)
        res, skipped = finite_difference_check(m, x, torch.tensor([0, 1, 2, 3]), n_params=100)
        worst = max(r[4] for r in res)
        ok &= len(res) >= 100 and worst <= 1e-3
        lines.append(f"{family}x{k}: {len(res)} params, max rel {worst:.2e}, {skipped} kink-skipped")
    verdict("gradient check", ok, "; ".join(lines) + " (limit 1e-3, float64)")


def test_hand_selection_oracle(verdict):
    rng = np.random.default_rng(1000)
    mismatches, sizes = 0, [0] * 5
    for _ in range(1000):
        left = rng.uniform(0, 640, 2)
        right = left + rng.normal(0, 120, 2)
        n = int(rng.integers(0, 5))
        sizes[n] += 1
        dets = []
        for _ in range(n):
            wrist = (left, right)[int(rng.integers(2))] + rng.normal(0, 80, 2)
            if rng.random() < 0.2:
                wrist = np.round(wrist / 10) * 10
            dets.append(make_detection(wrist, float(rng.choice([0.5, rng.uniform()])), rng=rng))
        thr = float(rng.choice([50.0, 100.0, 150.0]))
        got = select_hand_indices(dets, left, right, HandSelectConfig(wrist_dist_threshold=thr))
        mismatches += got != brute_force_selection(dets, left, right, thr)
    verdict("hand-selection oracle", mismatches == 0,
            f"1000 frames (detections per frame 0..4: {sizes}), {mismatches} mismatches vs brute force")


def test_metrics_oracle(verdict):
    rng = np.random.default_rng(1001)
    bad = 0
    for _ in range(1000):
        k = int(rng.integers(2, 10))
        n = int(rng.integers(1, 80))
        labels = rng.integers(0, k, n)
        preds = np.where(rng.random(n) < 0.5, labels, rng.integers(0, k, n))
        cm, macc, top1 = naive_metrics(preds.tolist(), labels.tolist(), k)
        bad += not (np.array_equal(confusion_matrix(preds, labels, k), cm)
                    and mean_class_accuracy(preds, labels, k) == macc
                    and top1_accuracy(preds, labels) == top1)
    verdict("metrics oracle", bad == 0, f"1000 prediction sets, {bad} disagreements with naive recount (exact)")


def test_scheduler(verdict):
    issues, Ts = [], (10, 11, 37, 99, 100, 270, 1000, 1001, 4321)
    for T in Ts:
        for max_lr in (1e-3, 5e-5):
            lrs = np.array([one_cycle_lr(i, T, max_lr) for i in range(T)])
            peak = math.floor(0.1 * T)
            if lrs[peak] != max_lr or int(np.argmax(lrs)) != peak:
                issues.append(f"T={T}: peak")
            if abs(lrs[0] - max_lr / 25) > 1e-9 * max_lr / 25 or abs(lrs[-1] - max_lr / 1e4) > 1e-9 * max_lr / 1e4:
                issues.append(f"T={T}: endpoints")
            if not (np.all(np.diff(lrs[:peak + 1]) > 0) and np.all(np.diff(lrs[peak:]) <= 0)):
                issues.append(f"T={T}: not unimodal")
    verdict("scheduler", not issues,
            f"T in {Ts}: max at floor(0.1 T), endpoints max/25 and max/1e4 within 1e-9 rel, unimodal; {issues}")


E2E_DATA = {"num_classes": 4, "clips_per_class": 30, "T": 32, "seed": 7}
E2E_SEEDS = (0, 1, 2)
FUSED = ("scaled_stack", "multi_image_2")


def _e2e_cfg(mode, seed):
    return TrainConfig(epochs=30, max_lr=1e-3, batch_size=8, seed=seed,
                       fusion=FusionConfig(mode=mode, scale_s=4, input_hw=(64, 64)),
                       backbone=BackboneConfig(family="windowed_attention", size="tiny_test"))


def test_synthetic_end_to_end(verdict, tmp_path):
    m = generate_synthetic_dataset(E2E_DATA, tmp_path / "a")
    generate_synthetic_dataset(E2E_DATA, tmp_path / "b")
    # brute-force oracle for the 0.75 body-only ceiling: the hand-only pair has identical body streams
    files = sorted(str(p.relative_to(tmp_path / "a")) for p in (tmp_path / "a").rglob("*") if p.is_file())
    _, mismatch, err = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    pair_same = all((tmp_path / f"a/body/c02_{k:03d}.jsonl").read_bytes()
                    == (tmp_path / f"a/body/c03_{k:03d}.jsonl").read_bytes() for k in range(30))
    verdict("synthetic pair oracle", pair_same and not mismatch and not err,
            f"{len(files)} files regenerate byte-identically; body streams of the hand-only pair identical: {pair_same}")

    macc = {}
    for mode in ("body_only",) + FUSED:
        cfg = _e2e_cfg(mode, 0)
        data = build_split_data(m, cfg)
        macc[mode] = [train_model(_e2e_cfg(mode, s), m, data=data).test_mAcc for s in E2E_SEEDS]
    med = {k: statistics.median(v) for k, v in macc.items()}
    body_ok = all(v <= 0.85 for v in macc["body_only"])
    fused_ok = all(sum(v >= 0.95 for v in macc[f]) >= 2 for f in FUSED)
    median_ok = all(med[f] > med["body_only"] for f in FUSED)
    detail = ", ".join(f"{k} {[round(v, 3) for v in vs]} (median {med[k]:.3f})" for k, vs in macc.items())
    verdict("synthetic end-to-end", body_ok and fused_ok and median_ok,
            f"{detail}; body_only<=0.85 {body_ok}, fused>=0.95 on 2/3 seeds {fused_ok}, "
            f"median fused > body {median_ok}")


def test_experiment_bookkeeping(verdict, small_dataset, tmp_path):
    lrs = (5e-3, 2.5e-3, 1e-3, 5e-4, 1e-4)
    base = TrainConfig(epochs=1, batch_size=8, fusion=FusionConfig(input_hw=(32, 32)),
                       backbone=BackboneConfig(family="conv_residual"))
    summaries, persisted = [], []
    for mode in ("body_only", "scaled_stack"):
        cfg = dataclasses.replace(base, fusion=FusionConfig(mode=mode, input_hw=(32, 32)))
        out = tmp_path / mode
        s = run_experiment(ExperimentGrid(cfg, lrs, 3), small_dataset, out)
        summaries.append(s)
        persisted.append(sum(1 for p in out.glob("*/result.json")))
    written = render_report(summaries, tmp_path / "report")
    n_box = [s.box["test_mAcc"].n for s in summaries]

    # one learning rate that diverges: its runs stay in the summary as failures
    diverge = TrainConfig(epochs=1, batch_size=8, fusion=FusionConfig(input_hw=(32, 32)),
                          backbone=BackboneConfig(family="windowed_attention"))
    f = run_experiment(ExperimentGrid(diverge, (1e12,) + lrs[1:], 3), small_dataset, tmp_path / "diverge")
    failed_ok = len(f.runs) == 15 and f.failures == 3 and f.box["test_mAcc"].n == 12
    ok = persisted == [15, 15] and n_box == [15, 15] and written["boxes"] == {"conv_residual": 2} and failed_ok
    verdict("experiment bookkeeping", ok,
            f"persisted runs {persisted}, box n {n_box}, boxes drawn {written['boxes']}; "
            f"diverging grid: {len(f.runs)} runs, {f.failures} failed, box n {f.box['test_mAcc'].n}")
