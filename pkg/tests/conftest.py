import itertools
from fractions import Fraction

import numpy as np
import pytest
import torch

from skelfusion.core import HandDetection
from skelfusion.ingest import generate_synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """4 classes x 10 clips, T=8; shared read-only across tests."""
    out = tmp_path_factory.mktemp("small")
    return generate_synthetic_dataset({"num_classes": 4, "clips_per_class": 10, "T": 8, "seed": 3}, out)


def make_detection(wrist_uv, score=0.9, hint="unknown", rng=None):
    rng = rng or np.random.default_rng(0)
    c2 = np.asarray(wrist_uv, dtype=float) + rng.normal(0, 20, (21, 2))
    c2[0] = wrist_uv
    c3 = rng.normal(0, 0.05, (21, 3))
    return HandDetection(c2, c3, score, hint)


def brute_force_selection(dets, left_wrist, right_wrist, threshold):
    """Reference hand assignment by exhaustive enumeration.

    Every detection is mapped to one of {none, left, right} with at most one
    detection per slot; an assignment is feasible if each assigned detection's
    wrist lies within the threshold of its slot's body wrist.  Preference:
    more filled slots, smaller total distance, larger total score, earliest
    indices (right slot compared first).
    """
    n = len(dets)
    wrists = {"left": np.asarray(left_wrist, float), "right": np.asarray(right_wrist, float)}
    best, best_key = {"left": None, "right": None}, None
    for labels in itertools.product((None, "left", "right"), repeat=n):
        if labels.count("left") > 1 or labels.count("right") > 1:
            continue
        slots = {"left": None, "right": None}
        cost = 0.0
        score = 0.0
        feasible = True
        for i, lab in enumerate(labels):
            if lab is None:
                continue
            d = float(np.hypot(*(dets[i].coords_2d[0] - wrists[lab])))
            if d > threshold:
                feasible = False
                break
            slots[lab] = i
            cost += d
            score += dets[i].score
        if not feasible:
            continue
        filled = sum(v is not None for v in slots.values())
        order = tuple(n if slots[s] is None else slots[s] for s in ("right", "left"))
        key = (-filled, cost, -score, order)
        if best_key is None or key < best_key:
            best, best_key = slots, key
    return best


def naive_metrics(preds, labels, num_classes):
    """Loop-based recount of confusion, per-class recall mean and top-1."""
    cm = [[0] * num_classes for _ in range(num_classes)]
    for p, l in zip(preds, labels):
        cm[l][p] += 1
    hits, n_present = Fraction(0), 0
    for c in range(num_classes):
        total = sum(cm[c])
        if total:
            hits += Fraction(cm[c][c], total)
            n_present += 1
    macc = float(hits / n_present)
    top1 = sum(1 for p, l in zip(preds, labels) if p == l) / len(labels)
    return np.array(cm), macc, top1


def finite_difference_check(model, x, y, n_params=100, eps=1e-5, seed=0, floor=1e-7, jitter=1e-2):
    """Compare autograd gradients of the cross-entropy loss against central
    differences on ``n_params`` randomly sampled scalar parameters (float64).

    Central differences are meaningless across a ReLU kink, so the sign pattern
    of every ReLU input is recorded at both probes and a parameter whose probes
    straddle a kink is replaced by another sample.  All parameters are first
    moved by ``jitter``-sized noise so zero-initialized biases do not sit on
    kinks by construction.

    Returns ``(results, n_skipped)`` with results as
    ``(name, index, analytic, numeric, rel_err)``.
    """
    model = model.double()
    model.train()
    x = x.double()
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(jitter * torch.randn(p.shape, generator=g, dtype=p.dtype))

    signs = []
    hooks = [m.register_forward_pre_hook(lambda mod, inp: signs.append(inp[0] > 0))
             for m in model.modules() if isinstance(m, torch.nn.ReLU)]

    def loss():
        signs.clear()
        return torch.nn.functional.cross_entropy(model(x), y)

    model.zero_grad()
    loss().backward()
    params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
    sizes = np.array([p.numel() for _, p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    order = np.random.default_rng(seed).permutation(sizes.sum())
    out, skipped = [], 0
    try:
        with torch.no_grad():
            for k in order:
                if len(out) == n_params:
                    break
                pi = int(np.searchsorted(offsets, k, side="right") - 1)
                name, p = params[pi]
                j = int(k - offsets[pi])
                flat = p.view(-1)
                analytic = float(p.grad.view(-1)[j])
                orig = float(flat[j])
                flat[j] = orig + eps
                lp = float(loss())
                sp = list(signs)
                flat[j] = orig - eps
                lm = float(loss())
                sm = list(signs)
                flat[j] = orig
                if any(not torch.equal(a, b) for a, b in zip(sp, sm)):
                    skipped += 1
                    continue
                numeric = (lp - lm) / (2 * eps)
                rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
                out.append((name, j, analytic, numeric, rel))
    finally:
        for h in hooks:
            h.remove()
    return out, skipped
