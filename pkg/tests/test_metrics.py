"""Evaluation metrics: frozen hand values, rank-only invariances, and a
brute-force threshold-sweep cross-check for PRO.

Frozen constants were computed by an independent oracle script (pairwise
counting for AUROC, a rank-walk for AUPR, BFS flood fill plus a dense
threshold sweep for PRO) before this implementation existed.
"""

import numpy as np
import pytest

from continual_ad.errors import DegenerateLabelsError, ShapeError, SizeError
from continual_ad.metrics import (
    TaskResultMatrix,
    aupr,
    auroc,
    forgetting_measure,
    pro,
)

AUPR_712 = 0.5833333333333333  # 7/12


# -- AUROC -------------------------------------------------------------------


def test_auroc_hand_case():
    assert auroc([0.9, 0.6, 0.4, 0.2], [1, 0, 1, 0]) == 0.75


def test_auroc_perfect_and_inverted():
    scores = [0.1, 0.2, 0.7, 0.9]
    labels = [0, 0, 1, 1]
    assert auroc(scores, labels) == 1.0
    assert auroc(scores, [1, 1, 0, 0]) == 0.0


def test_auroc_all_tied_scores():
    assert auroc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5


def test_auroc_tie_gets_half_credit():
    assert auroc([0.5, 0.5], [1, 0]) == 0.5


def test_auroc_monotone_transform_invariance():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(4, 30))
        scores = rng.normal(size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        base = auroc(scores, labels)
        assert auroc(100.0 * scores + 3.0, labels) == base
        assert auroc(np.exp(scores), labels) == base


def test_auroc_negation_symmetry():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=20)
    labels = rng.integers(0, 2, size=20)
    labels[0], labels[1] = 0, 1
    assert auroc(-scores, labels) == pytest.approx(1.0 - auroc(scores, labels), abs=1e-12)


def test_auroc_matches_pairwise_counting():
    rng = np.random.default_rng(2)
    for _ in range(20):
        n = int(rng.integers(4, 15))
        scores = np.round(rng.normal(size=n), 1)  # force some ties
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        count = sum(
            1.0 if p > q else (0.5 if p == q else 0.0) for p in pos for q in neg
        )
        assert auroc(scores, labels) == pytest.approx(
            count / (len(pos) * len(neg)), abs=1e-12
        )


def test_binary_metrics_reject_degenerate_labels():
    for fn in (auroc, aupr):
        with pytest.raises(DegenerateLabelsError):
            fn([0.1, 0.2], [1, 1])
        with pytest.raises(DegenerateLabelsError):
            fn([0.1, 0.2], [0, 0])
        with pytest.raises(DegenerateLabelsError):
            fn([0.1, 0.2], [0, 2])
    with pytest.raises(ShapeError):
        auroc([0.1, 0.2], [0, 1, 1])


# -- AUPR --------------------------------------------------------------------


def test_aupr_hand_case():
    assert aupr([0.9, 0.8, 0.7], [0, 1, 1]) == pytest.approx(AUPR_712, abs=1e-12)


def test_aupr_perfect():
    assert aupr([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_aupr_single_positive_ranked_last():
    n = 8
    scores = np.arange(n, dtype=float)
    labels = np.zeros(n, dtype=int)
    labels[0] = 1  # lowest score is the only positive
    assert aupr(scores, labels) == pytest.approx(1.0 / n, abs=1e-12)


def test_aupr_all_tied_is_prevalence():
    scores = [0.3] * 10
    labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]
    assert aupr(scores, labels) == pytest.approx(0.3, abs=1e-12)


def test_aupr_monotone_transform_invariance():
    rng = np.random.default_rng(3)
    for _ in range(50):
        n = int(rng.integers(4, 20))
        scores = rng.normal(size=n)
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        assert aupr(np.exp(scores), labels) == aupr(scores, labels)


def test_aupr_matches_rank_walk():
    """Tie-free case: AP must equal the step-by-step precision/recall walk."""
    rng = np.random.default_rng(4)
    for _ in range(20):
        n = int(rng.integers(4, 15))
        scores = rng.permutation(n).astype(float)  # distinct scores
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        order = np.argsort(-scores)
        tp = fp = 0
        ap = prev = 0.0
        for idx in order:
            tp, fp = (tp + 1, fp) if labels[idx] else (tp, fp + 1)
            recall = tp / labels.sum()
            ap += (recall - prev) * (tp / (tp + fp))
            prev = recall
        assert aupr(scores, labels) == pytest.approx(ap, abs=1e-12)


# -- PRO ---------------------------------------------------------------------


def toy_instance():
    pm = np.full((4, 4), 0.5)
    mask = np.zeros((4, 4), dtype=int)
    pm[0, 0] = pm[0, 1] = 1.0
    mask[0, 0] = mask[0, 1] = 1
    pm[3, 2] = pm[3, 3] = 0.2
    mask[3, 2] = mask[3, 3] = 1
    return pm, mask


def test_pro_toy_case():
    pm, mask = toy_instance()
    assert pro([pm], [mask]) == pytest.approx(0.5, abs=1e-12)


def test_pro_perfect_and_inverted():
    _, mask = toy_instance()
    assert pro([mask.astype(float)], [mask]) == pytest.approx(1.0, abs=1e-12)
    assert pro([1.0 - mask], [mask]) == pytest.approx(0.0, abs=1e-12)


def test_pro_single_array_convenience():
    pm, mask = toy_instance()
    assert pro(pm, mask) == pro([pm], [mask])


def test_pro_duplicated_instance_is_unchanged():
    pm, mask = toy_instance()
    assert pro([pm, pm], [mask, mask]) == pytest.approx(pro([pm], [mask]), abs=1e-12)


def test_pro_eight_connectivity():
    """A diagonal pair counts as one region.  With a second lone-pixel region
    the hand value under 8-connectivity is 0.3625; a 4-connected labeling
    would give 0.2917."""
    mask = np.zeros((4, 4), dtype=int)
    mask[0, 0] = mask[1, 1] = 1  # diagonal pair: one 8-connected region
    mask[3, 3] = 1               # separate single-pixel region
    pm = np.zeros((4, 4))
    pm[0, 0] = 1.0
    assert pro([pm], [mask]) == pytest.approx(0.3625, abs=1e-12)


def flood_components(mask):
    comp = np.zeros(mask.shape, dtype=int)
    cur = 0
    for i in range(mask.shape[0]):
        for j in range(mask.shape[1]):
            if mask[i, j] and comp[i, j] == 0:
                cur += 1
                stack = [(i, j)]
                comp[i, j] = cur
                while stack:
                    a, b = stack.pop()
                    for da in (-1, 0, 1):
                        for db in (-1, 0, 1):
                            na, nb = a + da, b + db
                            if (
                                0 <= na < mask.shape[0]
                                and 0 <= nb < mask.shape[1]
                                and mask[na, nb]
                                and comp[na, nb] == 0
                            ):
                                comp[na, nb] = cur
                                stack.append((na, nb))
    return comp, cur


def pro_bruteforce(pms, masks, cap=0.3):
    comps = []
    total_regions = 0
    for pm, mk in zip(pms, masks):
        comp, n = flood_components(mk)
        comps.append((pm, mk, comp, n))
        total_regions += n
    thresholds = np.unique(np.concatenate([pm.ravel() for pm, *_ in comps]))[::-1]
    pts = [(0.0, 0.0)]
    neg_total = sum((mk == 0).sum() for _, mk, _, _ in comps)
    for t in thresholds:
        overlap = 0.0
        fp = 0
        for pm, mk, comp, n in comps:
            hit = pm >= t
            for r in range(1, n + 1):
                region = comp == r
                overlap += (hit & region).sum() / region.sum() / total_regions
            fp += (hit & (mk == 0)).sum()
        pts.append((fp / neg_total, overlap))
    fprs = np.array([p[0] for p in pts])
    pros = np.array([p[1] for p in pts])
    if fprs[-1] > cap:
        i = np.searchsorted(fprs, cap, side="left")
        if fprs[i] > cap:
            f0, f1 = fprs[i - 1], fprs[i]
            p0, p1 = pros[i - 1], pros[i]
            pc = p0 + (p1 - p0) * (cap - f0) / (f1 - f0)
            fprs = np.concatenate([fprs[:i], [cap]])
            pros = np.concatenate([pros[:i], [pc]])
        else:
            fprs = fprs[: i + 1]
            pros = pros[: i + 1]
    return np.trapezoid(pros, fprs) / cap


def test_pro_matches_bruteforce_sweep():
    rng = np.random.default_rng(5)
    for _ in range(10):
        pms, masks = [], []
        for _ in range(int(rng.integers(1, 3))):
            mask = (rng.random((8, 8)) < 0.25).astype(int)
            if mask.sum() == 0:
                mask[2, 2] = 1
            if mask.sum() == mask.size:
                mask[0, 0] = 0
            pms.append(np.round(rng.random((8, 8)), 1))  # rounded: tied blocks
            masks.append(mask)
        assert pro(pms, masks) == pytest.approx(
            pro_bruteforce(pms, masks), abs=1e-12
        )


def test_pro_validation():
    pm, mask = toy_instance()
    with pytest.raises(DegenerateLabelsError):
        pro([pm], [np.zeros_like(mask)])  # no regions
    with pytest.raises(DegenerateLabelsError):
        pro([np.ones((2, 2))], [np.ones((2, 2), dtype=int)])  # no negatives
    with pytest.raises(ShapeError):
        pro([pm], [mask[:2]])
    with pytest.raises(ShapeError):
        pro([pm], [mask], fpr_cap=0.0)


# -- forgetting --------------------------------------------------------------


def test_matrix_set_get_and_triangle_guard():
    m = TaskResultMatrix("image_auroc", 3)
    assert np.all(np.isnan(m.values))
    m.set(1, 0, 0.9)
    assert m.get(1, 0) == 0.9
    with pytest.raises(ShapeError):
        m.set(0, 1, 0.5)  # future task at an early checkpoint
    with pytest.raises(ShapeError):
        m.get(3, 0)
    with pytest.raises(SizeError):
        TaskResultMatrix("x", 0)


def test_forgetting_hand_case():
    values = np.array([[0.9, np.nan], [0.8, 0.95]])
    assert forgetting_measure(values) == pytest.approx(0.1, abs=1e-12)
    assert forgetting_measure(values, paper_normalization=True) == pytest.approx(
        0.05, abs=1e-12
    )


def test_forgetting_three_checkpoints_uses_column_max():
    values = np.array(
        [[0.5, np.nan, np.nan], [0.7, 0.6, np.nan], [0.4, 0.6, 0.9]]
    )
    # task 0 best 0.7 final 0.4; task 1 best 0.6 final 0.6
    assert forgetting_measure(values) == pytest.approx(0.15, abs=1e-12)
    assert forgetting_measure(values, paper_normalization=True) == pytest.approx(
        0.05, abs=1e-12
    )


def test_forgetting_zero_and_negative():
    steady = np.array([[0.8, np.nan], [0.8, 0.9]])
    assert forgetting_measure(steady) == 0.0
    improving = np.array([[0.6, np.nan], [0.9, 0.9]])
    assert forgetting_measure(improving) == pytest.approx(-0.3, abs=1e-12)


def test_forgetting_accepts_matrix_object():
    m = TaskResultMatrix("image_auroc", 2)
    m.set(0, 0, 0.9)
    m.set(1, 0, 0.7)
    m.set(1, 1, 0.95)
    assert forgetting_measure(m) == pytest.approx(0.2, abs=1e-12)


def test_forgetting_validation():
    with pytest.raises(SizeError):
        forgetting_measure(np.array([[0.5]]))
    with pytest.raises(ShapeError):
        forgetting_measure(np.zeros((2, 3)))
