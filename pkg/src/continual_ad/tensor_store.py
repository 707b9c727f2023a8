"""File formats: MTNS tensor container, dataset manifests, bank directories.

MTNS layout (little-endian throughout):

    bytes 0..3   magic "MTNS"
    byte  4      format version (1)
    byte  5      dtype code (0 = f32, 1 = u32)
    byte  6      rank (1..4)
    byte  7      padding (0)
    next  8*rank u64 dims
    rest         row-major payload, 4 bytes per element

The payload length must match the dims exactly; anything else is treated as
corruption.  Storage precision is 32-bit; callers get float64 views of f32
data so later arithmetic stays in double precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ManifestReferenceError,
    ManifestSchemaError,
    ManifestValidationError,
    TensorCorruptionError,
    TensorFormatError,
)

MAGIC = b"MTNS"
FORMAT_VERSION = 1
_DTYPE_CODES = {"f32": 0, "u32": 1}
_CODE_DTYPES = {0: "f32", 1: "u32"}
_NUMPY_DTYPES = {"f32": np.dtype("<f4"), "u32": np.dtype("<u4")}

BANK_FORMAT_VERSION = 1


@dataclass
class TensorFile:
    """A typed dense tensor as stored on disk (f32 or u32 payload)."""

    dtype: str
    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        if self.dtype not in _DTYPE_CODES:
            raise TensorFormatError(f"unsupported dtype {self.dtype!r}")
        self.dims = tuple(int(d) for d in self.dims)
        if not 1 <= len(self.dims) <= 4:
            raise TensorFormatError(f"rank must be 1..4, got {len(self.dims)}")
        if any(d < 1 for d in self.dims):
            raise TensorFormatError(f"dims must all be >= 1, got {self.dims}")
        want = _NUMPY_DTYPES[self.dtype]
        self.data = np.ascontiguousarray(self.data, dtype=want)
        if self.data.shape != self.dims:
            raise TensorCorruptionError(
                f"payload shape {self.data.shape} does not match dims {self.dims}"
            )


def tensor_from_array(arr: np.ndarray) -> TensorFile:
    """Wrap a numpy array, casting floats to f32 and unsigned ints to u32."""
    arr = np.asarray(arr)
    dtype = "u32" if arr.dtype.kind in "ui" else "f32"
    return TensorFile(dtype=dtype, dims=arr.shape, data=arr.astype(_NUMPY_DTYPES[dtype]))


def write_tensor(path, t: TensorFile) -> None:
    path = Path(path)
    header = MAGIC + bytes([FORMAT_VERSION, _DTYPE_CODES[t.dtype], len(t.dims), 0])
    dims = struct.pack(f"<{len(t.dims)}Q", *t.dims)
    path.write_bytes(header + dims + t.data.tobytes(order="C"))


def read_tensor(path) -> TensorFile:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic")
    version, dtype_code, rank, pad = raw[4], raw[5], raw[6], raw[7]
    if version != FORMAT_VERSION:
        raise TensorFormatError(f"{path}: unsupported version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {dtype_code}")
    if not 1 <= rank <= 4 or pad != 0:
        raise TensorFormatError(f"{path}: bad rank/padding ({rank}, {pad})")
    if len(raw) < 8 + 8 * rank:
        raise TensorCorruptionError(f"{path}: header truncated")
    dims = struct.unpack(f"<{rank}Q", raw[8 : 8 + 8 * rank])
    if any(d < 1 for d in dims):
        raise TensorFormatError(f"{path}: dims must be >= 1, got {dims}")
    count = int(np.prod(dims))
    payload = raw[8 + 8 * rank :]
    if len(payload) != 4 * count:
        raise TensorCorruptionError(
            f"{path}: payload has {len(payload)} bytes, expected {4 * count}"
        )
    dtype = _CODE_DTYPES[dtype_code]
    data = np.frombuffer(payload, dtype=_NUMPY_DTYPES[dtype]).reshape(dims)
    return TensorFile(dtype=dtype, dims=dims, data=data.copy())


def read_tensor_f64(path) -> np.ndarray:
    """Read an f32 tensor and return it widened to float64."""
    t = read_tensor(path)
    if t.dtype != "f32":
        raise TensorFormatError(f"{path}: expected f32 payload, got {t.dtype}")
    return t.data.astype(np.float64)


def read_label_grid(path) -> np.ndarray:
    """Read a u32 rank-2 label grid."""
    t = read_tensor(path)
    if t.dtype != "u32":
        raise TensorFormatError(f"{path}: expected u32 payload, got {t.dtype}")
    if len(t.dims) != 2:
        raise TensorFormatError(f"{path}: expected rank-2 grid, got rank {len(t.dims)}")
    return t.data.astype(np.int64)


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------


@dataclass
class TrainItem:
    features: Path
    mask: Path


@dataclass
class TestItem:
    features: Path
    image_label: int
    pixel_mask: Path | None = None


@dataclass
class TaskSpec:
    name: str
    text_feature: Path
    train_items: list[TrainItem] = field(default_factory=list)
    test_items: list[TestItem] = field(default_factory=list)


@dataclass
class DatasetManifest:
    tasks: list[TaskSpec]
    root: Path


def _require(obj: dict, key: str, context: str):
    if key not in obj:
        raise ManifestSchemaError(f"{context}: missing field {key!r}")
    return obj[key]


def _resolve(root: Path, rel, context: str) -> Path:
    if not isinstance(rel, str):
        raise ManifestSchemaError(f"{context}: path must be a string, got {type(rel).__name__}")
    p = (root / rel).resolve() if not Path(rel).is_absolute() else Path(rel)
    if not p.is_file():
        raise ManifestReferenceError(f"{context}: path does not resolve to a file: {rel}")
    return p


def load_manifest(path) -> DatasetManifest:
    """Load and fully validate a dataset manifest (JSON).

    Relative paths are resolved against the manifest's directory; every
    referenced file must exist.  Task order in the document is the continual
    training order.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestReferenceError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ManifestSchemaError(f"{path}: invalid JSON ({e})") from e
    root = path.resolve().parent

    tasks_doc = _require(doc, "tasks", str(path))
    if not isinstance(tasks_doc, list) or not tasks_doc:
        raise ManifestSchemaError(f"{path}: 'tasks' must be a nonempty list")

    tasks: list[TaskSpec] = []
    seen_names: set[str] = set()
    for ti, tdoc in enumerate(tasks_doc):
        ctx = f"task[{ti}]"
        name = _require(tdoc, "name", ctx)
        if not isinstance(name, str) or not name:
            raise ManifestSchemaError(f"{ctx}: 'name' must be a nonempty string")
        if name in seen_names:
            raise ManifestValidationError(f"duplicate task name {name!r}")
        seen_names.add(name)

        text_feature = _resolve(root, _require(tdoc, "text_feature", ctx), f"{ctx}.text_feature")

        train_items = []
        for ii, idoc in enumerate(_require(tdoc, "train_items", ctx)):
            ictx = f"{ctx}.train_items[{ii}]"
            train_items.append(
                TrainItem(
                    features=_resolve(root, _require(idoc, "features", ictx), ictx),
                    mask=_resolve(root, _require(idoc, "mask", ictx), ictx),
                )
            )

        test_items = []
        for ii, idoc in enumerate(_require(tdoc, "test_items", ctx)):
            ictx = f"{ctx}.test_items[{ii}]"
            label = _require(idoc, "image_label", ictx)
            if label not in (0, 1):
                raise ManifestValidationError(f"{ictx}: image_label must be 0 or 1, got {label!r}")
            pixel_mask = idoc.get("pixel_mask")
            test_items.append(
                TestItem(
                    features=_resolve(root, _require(idoc, "features", ictx), ictx),
                    image_label=int(label),
                    pixel_mask=_resolve(root, pixel_mask, ictx) if pixel_mask is not None else None,
                )
            )

        tasks.append(
            TaskSpec(
                name=name,
                text_feature=text_feature,
                train_items=train_items,
                test_items=test_items,
            )
        )
    return DatasetManifest(tasks=tasks, root=root)


# ---------------------------------------------------------------------------
# Memory-bank persistence
# ---------------------------------------------------------------------------


def save_bank(path, bank) -> None:
    """Serialize a memory bank as a directory: index.json + per-task tensors."""
    from .bank import MemoryBank  # local import to keep module layering one-way

    assert isinstance(bank, MemoryBank)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    index = {
        "format_version": BANK_FORMAT_VERSION,
        "dim": bank.dim,
        "config": bank.config.to_dict(),
        "tasks": [{"task_id": e.task_id, "name": e.name} for e in bank.entries],
    }
    (root / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")

    for entry in bank.entries:
        tdir = root / f"task_{entry.task_id:03d}"
        tdir.mkdir(exist_ok=True)
        arrays = {
            "keys": entry.keys,
            "knowledge": entry.knowledge,
            "learnable_key": entry.learnable_key,
            "text": entry.text,
            "t2i_query": entry.w_t2i.w_q,
            "t2i_key": entry.w_t2i.w_k,
            "t2i_value": entry.w_t2i.w_v,
            "i2t_query": entry.w_i2t.w_q,
            "i2t_key": entry.w_i2t.w_k,
            "i2t_value": entry.w_i2t.w_v,
        }
        if entry.prompt.length > 0:
            arrays["prompt_key"] = entry.prompt.p_key
            arrays["prompt_value"] = entry.prompt.p_value
        for stem, arr in arrays.items():
            write_tensor(tdir / f"{stem}.mtns", tensor_from_array(np.asarray(arr, dtype=np.float64)))


def load_bank(path):
    """Load a bank directory written by `save_bank` (storage precision: f32)."""
    from .attention import AttentionWeights, PromptParams
    from .bank import BankConfig, MemoryBank, TaskMemoryEntry

    root = Path(path)
    index_path = root / "index.json"
    if not index_path.is_file():
        raise TensorFormatError(f"{root}: no index.json")
    index = json.loads(index_path.read_text())
    if index.get("format_version") != BANK_FORMAT_VERSION:
        raise TensorFormatError(
            f"{root}: bank format version {index.get('format_version')!r} not supported"
        )
    config = BankConfig.from_dict(index["config"])
    dim = int(index["dim"])

    entries = []
    for tdoc in index["tasks"]:
        task_id = int(tdoc["task_id"])
        tdir = root / f"task_{task_id:03d}"

        def arr(stem, tdir=tdir):
            return read_tensor_f64(tdir / f"{stem}.mtns")

        if (tdir / "prompt_key.mtns").is_file():
            prompt = PromptParams(p_key=arr("prompt_key"), p_value=arr("prompt_value"))
        else:
            prompt = PromptParams(
                p_key=np.zeros((0, dim)), p_value=np.zeros((0, dim))
            )
        entries.append(
            TaskMemoryEntry(
                task_id=task_id,
                name=str(tdoc["name"]),
                keys=arr("keys"),
                prompt=prompt,
                knowledge=arr("knowledge"),
                learnable_key=arr("learnable_key"),
                text=arr("text"),
                w_t2i=AttentionWeights(
                    w_q=arr("t2i_query"), w_k=arr("t2i_key"), w_v=arr("t2i_value"),
                    head_count=config.head_count,
                ),
                w_i2t=AttentionWeights(
                    w_q=arr("i2t_query"), w_k=arr("i2t_key"), w_v=arr("i2t_value"),
                    head_count=config.head_count,
                ),
            )
        )
    return MemoryBank(entries=entries, dim=dim, config=config)
