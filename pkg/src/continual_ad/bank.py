"""Per-task memory: condensed keys, prompts, and knowledge coresets.

Each trained task leaves behind one entry holding

  * `keys`       -- FPS-condensed raw key-layer patch features, used to route
                    incoming test images to a task,
  * `prompt`     -- the trained prefix prompt,
  * `knowledge`  -- an FPS coreset of fused normal patch features, scored
                    against at test time by exact nearest neighbor,
  * `learnable_key`, the task text feature, and both fusion weight sets.

Routing and scoring are pure reads; the bank is append-only during training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionWeights, PromptParams
from .errors import (
    ConfigError,
    EmptyBankError,
    ShapeError,
    SizeError,
    TaskLookupError,
)
from .linalg import as_matrix, as_vector, cosine_similarity

ROUTE_MODES = ("max_cosine", "sum_min_l2")


@dataclass
class BankConfig:
    """Hyperparameter snapshot stored alongside the entries."""

    tau: float = 0.07
    lam: float = 1.0
    key_layer: int = 5
    score_layer: int = 5
    key_ratio: float = 0.1
    coreset_ratio: float = 0.1
    head_count: int = 1
    route_mode: str = "max_cosine"
    route_with_learnable_key: bool = False
    sigma: float = 4.0

    def __post_init__(self):
        if self.route_mode not in ROUTE_MODES:
            raise ConfigError(f"unknown route_mode {self.route_mode!r}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        for name in ("key_ratio", "coreset_ratio"):
            r = getattr(self, name)
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {r}")
        if self.head_count < 1:
            raise ConfigError(f"head_count must be >= 1, got {self.head_count}")
        if self.key_layer < 0 or self.score_layer < 0:
            raise ConfigError("layer taps must be non-negative")
        if self.sigma < 0:
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "lam": self.lam,
            "key_layer": self.key_layer,
            "score_layer": self.score_layer,
            "key_ratio": self.key_ratio,
            "coreset_ratio": self.coreset_ratio,
            "head_count": self.head_count,
            "route_mode": self.route_mode,
            "route_with_learnable_key": self.route_with_learnable_key,
            "sigma": self.sigma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BankConfig":
        return cls(**d)


@dataclass
class TaskMemoryEntry:
    task_id: int
    name: str
    keys: np.ndarray       # (K_n, D) raw key-layer features
    prompt: PromptParams
    knowledge: np.ndarray  # (MK_n, D) fused normal patch features
    learnable_key: np.ndarray
    text: np.ndarray
    w_t2i: AttentionWeights
    w_i2t: AttentionWeights

    def __post_init__(self):
        self.keys = as_matrix(self.keys, "keys")
        self.knowledge = as_matrix(self.knowledge, "knowledge")
        self.learnable_key = as_vector(self.learnable_key, "learnable_key")
        self.text = as_vector(self.text, "text")
        d = self.keys.shape[1]
        for name, arr in (("knowledge", self.knowledge),):
            if arr.shape[1] != d:
                raise ShapeError(f"{name} dim {arr.shape[1]} != key dim {d}")
        for name, vec in (("learnable_key", self.learnable_key), ("text", self.text)):
            if vec.shape[0] != d:
                raise ShapeError(f"{name} dim {vec.shape[0]} != key dim {d}")
        if self.prompt.length > 0 and self.prompt.dim != d:
            raise ShapeError(f"prompt dim {self.prompt.dim} != key dim {d}")
        for name, arr in (("keys", self.keys), ("knowledge", self.knowledge)):
            norms = np.linalg.norm(arr, axis=1)
            if np.any(norms == 0.0):
                raise ShapeError(f"{name} contains a zero-norm row")

    @property
    def dim(self) -> int:
        return self.keys.shape[1]


@dataclass
class MemoryBank:
    entries: list[TaskMemoryEntry] = field(default_factory=list)
    dim: int = 0
    config: BankConfig = field(default_factory=BankConfig)

    def __post_init__(self):
        for i, entry in enumerate(self.entries):
            if entry.task_id != i:
                raise ShapeError(
                    f"task ids must be contiguous from 0, got {entry.task_id} at {i}"
                )
            if self.dim and entry.dim != self.dim:
                raise ShapeError(f"entry dim {entry.dim} != bank dim {self.dim}")

    def __len__(self) -> int:
        return len(self.entries)

    def add_entry(self, entry: TaskMemoryEntry):
        if entry.task_id != len(self.entries):
            raise ShapeError(
                f"expected task_id {len(self.entries)}, got {entry.task_id}"
            )
        if self.dim == 0:
            self.dim = entry.dim
        elif entry.dim != self.dim:
            raise ShapeError(f"entry dim {entry.dim} != bank dim {self.dim}")
        self.entries.append(entry)

    def entry(self, task_id: int) -> TaskMemoryEntry:
        if not 0 <= task_id < len(self.entries):
            raise TaskLookupError(f"no task {task_id} in bank of {len(self.entries)}")
        return self.entries[task_id]


def coreset_size(n: int, ratio: float) -> int:
    """ceil(ratio * n), clamped into [1, n]."""
    if n < 1:
        raise SizeError("empty feature stack")
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"ratio must be in (0, 1], got {ratio}")
    return min(n, max(1, math.ceil(ratio * n)))


def fps_subsample(points, count: int, start: int = 0) -> np.ndarray:
    """Greedy farthest-point subsampling; returns `count` indices.

    The first pick is `start`; every later pick maximizes the minimum L2
    distance to the already-picked set, ties going to the lowest index.
    """
    pts = as_matrix(points, "points")
    n = pts.shape[0]
    if not 1 <= count <= n:
        raise SizeError(f"fps count {count} out of range for {n} points")
    if not 0 <= start < n:
        raise SizeError(f"fps start {start} out of range for {n} points")

    chosen = np.empty(count, dtype=np.int64)
    chosen[0] = start
    min_d = np.sqrt(np.sum((pts - pts[start]) ** 2, axis=1))
    min_d[start] = -1.0  # never re-pick a selected index, even among duplicates
    for i in range(1, count):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        d = np.sqrt(np.sum((pts - pts[nxt]) ** 2, axis=1))
        np.minimum(min_d, d, out=min_d)
        min_d[nxt] = -1.0
    return chosen


def build_entry(
    task_id: int,
    name: str,
    key_feats,
    fused_knowledge,
    prompt: PromptParams,
    learnable_key,
    text,
    w_t2i: AttentionWeights,
    w_i2t: AttentionWeights,
    key_ratio: float = 0.1,
    coreset_ratio: float = 0.1,
    start: int = 0,
) -> TaskMemoryEntry:
    """Condense feature stacks by FPS and assemble a bank entry."""
    key_feats = as_matrix(key_feats, "key_feats")
    fused_knowledge = as_matrix(fused_knowledge, "fused_knowledge")
    k_idx = fps_subsample(key_feats, coreset_size(key_feats.shape[0], key_ratio), start)
    m_idx = fps_subsample(
        fused_knowledge, coreset_size(fused_knowledge.shape[0], coreset_ratio), start
    )
    return TaskMemoryEntry(
        task_id=task_id,
        name=name,
        keys=key_feats[k_idx].copy(),
        prompt=prompt,
        knowledge=fused_knowledge[m_idx].copy(),
        learnable_key=np.asarray(learnable_key, dtype=np.float64).copy(),
        text=np.asarray(text, dtype=np.float64).copy(),
        w_t2i=w_t2i,
        w_i2t=w_i2t,
    )


def route(query_feats, bank: MemoryBank) -> int:
    """Pick the task whose key set best matches a test image's features."""
    task, _ = route_scores(query_feats, bank)
    return task


def route_scores(query_feats, bank: MemoryBank) -> tuple[int, np.ndarray]:
    """Routing decision plus the per-task score vector behind it."""
    q = as_matrix(query_feats, "query_feats")
    if len(bank) == 0:
        raise EmptyBankError("cannot route against an empty bank")
    mode = bank.config.route_mode

    scores = np.empty(len(bank), dtype=np.float64)
    if mode == "max_cosine":
        qbar = q.mean(axis=0)
        for i, entry in enumerate(bank.entries):
            keys = (
                entry.learnable_key[None, :]
                if bank.config.route_with_learnable_key
                else entry.keys
            )
            scores[i] = max(cosine_similarity(qbar, k) for k in keys)
        return int(np.argmax(scores)), scores
    # summed min-L2 against each task's key set; lower is better
    for i, entry in enumerate(bank.entries):
        keys = (
            entry.learnable_key[None, :]
            if bank.config.route_with_learnable_key
            else entry.keys
        )
        scores[i] = float(nn_min_distances(q, keys).sum())
    return int(np.argmin(scores)), scores


def retrieve_knowledge(bank: MemoryBank, task_id: int) -> np.ndarray:
    """The stored knowledge matrix for one task (the array itself, not a copy)."""
    return bank.entry(task_id).knowledge


def nn_min_distances(test, memory) -> np.ndarray:
    """Exact nearest-neighbor distance from every test row to the memory set."""
    test = as_matrix(test, "test")
    memory = as_matrix(memory, "memory")
    if memory.shape[0] < 1:
        raise SizeError("empty memory")
    if test.shape[1] != memory.shape[1]:
        raise ShapeError(f"dims differ: {test.shape[1]} vs {memory.shape[1]}")
    out = np.empty(test.shape[0], dtype=np.float64)
    for i in range(test.shape[0]):
        d = np.sqrt(np.sum((memory - test[i]) ** 2, axis=1))
        out[i] = d.min()
    return out
