"""Task-incremental anomaly detection with a key/prompt/knowledge memory.

The pipeline, end to end: a (pluggable) backbone supplies per-layer patch
features and a text feature per task; training tunes a prefix prompt,
cross-modal fusion weights and a learnable key under a contrastive +
cross-modal + key-match objective; the trained task is condensed into a
memory-bank entry (FPS key set, prompt, knowledge coreset).  At test time
images are routed to a task by key similarity and scored by exact nearest
neighbor against that task's knowledge.  A continual harness trains task
sequences and reports AUROC/AUPR/PRO and forgetting measures.
"""

from .attention import (
    AttentionWeights,
    FusedFeatures,
    PromptParams,
    cross_attention,
    fuse_multimodal,
    identity_weights,
    prefix_attention,
)
from .backbone import (
    BackboneConfig,
    PatchFeatureMap,
    TextFeature,
    extract_patches,
    extract_text,
    synthetic_features,
)
from .bank import (
    BankConfig,
    MemoryBank,
    TaskMemoryEntry,
    build_entry,
    fps_subsample,
    nn_min_distances,
    retrieve_knowledge,
    route,
)
from .detector import AnomalyResult, detect, upsample_scores
from .errors import (
    ConfigError,
    DegenerateLabelsError,
    DegenerateVectorError,
    EmptyBankError,
    EngineError,
    ManifestError,
    NumericError,
    ShapeError,
    SizeError,
    TapError,
    TaskLookupError,
    TensorCorruptionError,
    TensorFormatError,
)
from .harness import (
    BenchmarkReport,
    continual_train,
    evaluate_suite,
    run_continual,
    write_report_csv,
    write_report_json,
)
from .losses import (
    LossBreakdown,
    TrainableParams,
    TrainingBatch,
    TrainingItem,
    cross_modal_loss,
    grad_total_loss,
    key_prompt_loss,
    region_contrastive_loss,
    region_mask,
    similarity_matrix,
    total_loss,
)
from .metrics import TaskResultMatrix, aupr, auroc, forgetting_measure, pro
from .synth import SynthSpec, generate
from .tensor_store import (
    DatasetManifest,
    load_bank,
    load_manifest,
    read_tensor,
    save_bank,
    write_tensor,
)
from .trainer import (
    LabeledImage,
    PseudoLabelGrid,
    TrainConfig,
    patchify_labels,
    train_task,
)

__version__ = "0.1.0"
