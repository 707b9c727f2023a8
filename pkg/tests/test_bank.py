"""Memory bank: FPS coresets, routing, retrieval, and exact patch-NN scores.

The FPS line-case indices were frozen from an independent greedy oracle.
"""

import numpy as np
import pytest

from continual_ad.attention import PromptParams, identity_weights
from continual_ad.bank import (
    BankConfig,
    MemoryBank,
    TaskMemoryEntry,
    build_entry,
    coreset_size,
    fps_subsample,
    nn_min_distances,
    retrieve_knowledge,
    route,
    route_scores,
)
from continual_ad.errors import (
    ConfigError,
    EmptyBankError,
    ShapeError,
    SizeError,
    TaskLookupError,
)


def fps_oracle(pts, m, start=0):
    """Exhaustive greedy farthest-point walk, ties to the lowest index."""
    chosen = [start]
    while len(chosen) < m:
        best_idx, best_d = None, -1.0
        for i in range(len(pts)):
            if i in chosen:
                continue
            dmin = min(float(np.linalg.norm(pts[i] - pts[c])) for c in chosen)
            if dmin > best_d:
                best_d = dmin
                best_idx = i
        chosen.append(best_idx)
    return chosen


def make_entry(task_id, keys, knowledge=None, learnable_key=None, text=None, d=None):
    keys = np.asarray(keys, dtype=np.float64)
    d = keys.shape[1] if d is None else d
    return TaskMemoryEntry(
        task_id=task_id,
        name=f"task{task_id}",
        keys=keys,
        prompt=PromptParams(np.zeros((1, d)), np.zeros((1, d))),
        knowledge=keys.copy() if knowledge is None else np.asarray(knowledge, float),
        learnable_key=np.ones(d) if learnable_key is None else learnable_key,
        text=np.ones(d) if text is None else text,
        w_t2i=identity_weights(d),
        w_i2t=identity_weights(d),
    )


def make_bank(entries, **config_kwargs):
    return MemoryBank(entries=entries, config=BankConfig(**config_kwargs))


# -- farthest-point subsampling ---------------------------------------------


def test_fps_line_cases():
    pts = np.array([[0.0], [1.0], [2.0], [10.0]])
    assert fps_subsample(pts, 2).tolist() == [0, 3]
    assert fps_subsample(pts, 3).tolist() == [0, 3, 2]
    assert fps_subsample(pts, 4).tolist() == [0, 3, 2, 1]


def test_fps_matches_exhaustive_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 13))
        pts = rng.normal(size=(n, 2))
        m = int(rng.integers(1, n + 1))
        start = int(rng.integers(0, n))
        assert fps_subsample(pts, m, start).tolist() == fps_oracle(pts, m, start)


def test_fps_duplicates_never_repicked():
    pts = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    idx = fps_subsample(pts, 4)
    assert sorted(idx.tolist()) == [0, 1, 2, 3]


def test_fps_full_count_is_permutation():
    rng = np.random.default_rng(1)
    pts = rng.normal(size=(9, 3))
    idx = fps_subsample(pts, 9)
    assert sorted(idx.tolist()) == list(range(9))


def test_fps_start_and_count_one():
    pts = np.array([[0.0], [5.0], [6.0]])
    assert fps_subsample(pts, 1, start=2).tolist() == [2]
    assert fps_subsample(pts, 2, start=1).tolist() == [1, 0]


def test_fps_validation():
    pts = np.zeros((3, 2))
    with pytest.raises(SizeError):
        fps_subsample(pts, 0)
    with pytest.raises(SizeError):
        fps_subsample(pts, 4)
    with pytest.raises(SizeError):
        fps_subsample(pts, 2, start=3)


def test_coreset_size_arithmetic():
    assert coreset_size(100, 0.1) == 10
    assert coreset_size(5, 0.1) == 1     # ceil(0.5) clamped up
    assert coreset_size(7, 0.3) == 3     # ceil(2.1)
    assert coreset_size(10, 1.0) == 10
    assert coreset_size(1, 0.5) == 1
    with pytest.raises(SizeError):
        coreset_size(0, 0.5)
    with pytest.raises(ConfigError):
        coreset_size(10, 0.0)
    with pytest.raises(ConfigError):
        coreset_size(10, 1.5)


def test_fps_two_cluster_coverage():
    """With two well-separated clusters and room for two picks, FPS must
    represent both clusters."""
    rng = np.random.default_rng(2)
    a = rng.normal(size=(20, 3)) * 0.1
    b = rng.normal(size=(20, 3)) * 0.1 + 100.0
    pts = np.vstack([a, b])
    idx = fps_subsample(pts, coreset_size(40, 0.1))
    assert np.any(idx < 20) and np.any(idx >= 20)


# -- entries and the bank ----------------------------------------------------


def test_build_entry_applies_fps_and_copies():
    keys_in = np.array([[1.0], [2.0], [3.0], [11.0]])  # same gaps as 0,1,2,10
    fused_in = np.array([[1.0, 0.0], [3.0, 0.0], [0.0, 4.0], [30.0, 40.0]])
    entry = build_entry(
        0,
        "t",
        np.hstack([keys_in, np.ones((4, 1))]),
        fused_in,
        prompt=PromptParams(np.zeros((1, 2)), np.zeros((1, 2))),
        learnable_key=np.ones(2),
        text=np.ones(2),
        w_t2i=identity_weights(2),
        w_i2t=identity_weights(2),
        key_ratio=0.5,
        coreset_ratio=0.5,
    )
    assert entry.keys.tolist() == [[1.0, 1.0], [11.0, 1.0]]
    assert entry.knowledge.tolist() == [[1.0, 0.0], [30.0, 40.0]]
    fused_in[:] = -7.0  # entry must hold its own copies
    assert entry.knowledge.tolist() == [[1.0, 0.0], [30.0, 40.0]]


def test_entry_validation():
    with pytest.raises(ShapeError):
        make_entry(0, [[1.0, 0.0], [0.0, 0.0]])  # zero-norm key row
    with pytest.raises(ShapeError):
        make_entry(0, [[1.0, 0.0]], knowledge=[[1.0, 0.0, 0.0]])


def test_bank_contiguity_and_lookup():
    bank = make_bank([])
    e0 = make_entry(0, [[1.0, 0.0]])
    bank.add_entry(e0)
    with pytest.raises(ShapeError):
        bank.add_entry(make_entry(2, [[0.0, 1.0]]))
    bank.add_entry(make_entry(1, [[0.0, 1.0]]))
    assert len(bank) == 2
    assert bank.entry(1).name == "task1"
    with pytest.raises(TaskLookupError):
        bank.entry(2)
    with pytest.raises(ShapeError):
        bank.add_entry(make_entry(2, [[1.0, 0.0, 0.0]]))  # dim mismatch


def test_bank_config_round_trip_and_validation():
    cfg = BankConfig(tau=0.1, lam=2.0, route_mode="sum_min_l2", sigma=0.0)
    assert BankConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigError):
        BankConfig(tau=0.0)
    with pytest.raises(ConfigError):
        BankConfig(route_mode="nonsense")
    with pytest.raises(ConfigError):
        BankConfig(head_count=0)
    with pytest.raises(ConfigError):
        BankConfig(sigma=-1.0)


# -- routing -----------------------------------------------------------------


def orthogonal_bank(**config_kwargs):
    e0 = make_entry(0, [[1.0, 0.0, 0.0]])
    e1 = make_entry(1, [[0.0, 1.0, 0.0]])
    return make_bank([e0, e1], **config_kwargs)


def test_route_single_entry():
    bank = make_bank([make_entry(0, [[1.0, 0.0]])])
    assert route(np.array([[0.3, -0.9]]), bank) == 0


def test_route_orthogonal_keys():
    bank = orthogonal_bank()
    assert route(np.array([[0.9, 0.1, 0.0]]), bank) == 0
    assert route(np.array([[0.1, 0.9, 0.0]]), bank) == 1


def test_route_tie_prefers_lowest_id():
    bank = orthogonal_bank()
    task, scores = route_scores(np.array([[1.0, 1.0, 0.0]]), bank)
    assert scores[0] == scores[1]
    assert task == 0


def test_route_scale_invariance():
    bank = orthogonal_bank()
    q = np.array([[0.2, 0.7, 0.1], [0.0, 0.5, 0.5]])
    t1, s1 = route_scores(q, bank)
    t2, s2 = route_scores(q * 250.0, bank)
    assert t1 == t2
    assert np.allclose(s1, s2, atol=1e-12)


def test_route_max_cosine_uses_best_key_per_task():
    """A task owning several keys is scored by its best-matching key."""
    e0 = make_entry(0, [[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    e1 = make_entry(1, [[0.0, 1.0, 0.0]])
    bank = make_bank([e0, e1])
    assert route(np.array([[0.0, 0.1, 0.99]]), bank) == 0


def test_route_sum_min_l2_mode():
    bank = orthogonal_bank(route_mode="sum_min_l2")
    _, scores = route_scores(np.array([[1.0, 0.0, 0.0], [0.9, 0.0, 0.0]]), bank)
    assert scores[0] == pytest.approx(0.1, abs=1e-12)  # 0 + 0.1
    assert route(np.array([[1.0, 0.0, 0.0], [0.9, 0.0, 0.0]]), bank) == 0
    assert route(np.array([[0.0, 1.1, 0.0]]), bank) == 1


def test_route_with_learnable_key_flag():
    """Stored keys point one way, learnable keys the other; the flag decides
    which set drives routing."""
    e0 = make_entry(0, [[1.0, 0.0]], learnable_key=np.array([0.0, 1.0]))
    e1 = make_entry(1, [[0.0, 1.0]], learnable_key=np.array([1.0, 0.0]))
    q = np.array([[1.0, 0.05]])
    assert route(q, make_bank([e0, e1])) == 0
    assert route(q, make_bank([e0, e1], route_with_learnable_key=True)) == 1


def test_route_empty_bank():
    with pytest.raises(EmptyBankError):
        route(np.array([[1.0]]), make_bank([]))


def test_retrieve_knowledge_identity_and_lookup():
    know = np.array([[1.0, 2.0], [3.0, 4.0]])
    bank = make_bank([make_entry(0, [[1.0, 0.0]], knowledge=know)])
    got = retrieve_knowledge(bank, 0)
    assert got is bank.entries[0].knowledge
    assert np.array_equal(got, know)
    with pytest.raises(TaskLookupError):
        retrieve_knowledge(bank, 1)


# -- nearest-neighbor scores -------------------------------------------------


def test_nn_min_distances_hand_case():
    memory = np.array([[0.0, 0.0], [10.0, 0.0]])
    test = np.array([[3.0, 4.0], [9.0, 0.0]])
    assert nn_min_distances(test, memory).tolist() == [5.0, 1.0]


def test_nn_min_distances_matches_bruteforce_bitwise():
    rng = np.random.default_rng(3)
    test = rng.normal(size=(40, 7))
    memory = rng.normal(size=(25, 7))
    got = nn_min_distances(test, memory)
    expected = np.array(
        [np.sqrt(np.sum((memory - t) ** 2, axis=1)).min() for t in test]
    )
    assert np.array_equal(got, expected)


def test_nn_min_distances_monotone_in_memory():
    rng = np.random.default_rng(4)
    test = rng.normal(size=(10, 3))
    memory = rng.normal(size=(6, 3))
    extra = np.vstack([memory, rng.normal(size=(4, 3))])
    assert np.all(nn_min_distances(test, extra) <= nn_min_distances(test, memory))


def test_nn_min_distances_zero_for_members():
    memory = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert nn_min_distances(memory, memory).tolist() == [0.0, 0.0]


def test_nn_min_distances_validation():
    with pytest.raises(ShapeError):
        nn_min_distances(np.zeros((2, 3)), np.zeros((2, 2)))
    with pytest.raises(SizeError):
        nn_min_distances(np.zeros((2, 2)), np.zeros((0, 2)))
