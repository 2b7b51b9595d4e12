"""Self-contained CNN engine for binary cell-image classification.

Four compact fire-module architectures with exact parameter accounting, a
tape-based reverse-mode autodiff core, Adam training, a deterministic data
pipeline, confusion-matrix metrics with ROC/AUC, and a binary weights format.
"""

from .architectures import (
    ARCH_IDS,
    ArchSpec,
    FireSpec,
    LayerRow,
    Network,
    arch_spec,
    build,
    count_trainable_params,
    format_storage,
    forward,
    summary,
)
from .autograd import GradCheckReport, Tape, backward, grad_check
from .data import (
    AugmentConfig,
    DatasetSplit,
    ImageRecord,
    RecordStore,
    augment,
    batch_iter,
    bilinear_resize,
    load_and_preprocess,
    scan_dataset,
    stratified_split,
)
from .errors import (
    FormatError,
    IngestionError,
    IntegrityError,
    ShapeError,
    UsageError,
)
from .metrics import (
    ClassMetrics,
    ConfusionMatrix,
    MetricsReport,
    RocCurve,
    accuracy,
    auc,
    confusion_matrix,
    per_class_prf,
    report_from_confusion,
    report_from_results,
    roc_points,
    weighted_average,
)
from .model_io import load_weights, save_weights, write_report
from .tensor_core import (
    ConvKernel,
    Tensor4,
    channel_concat,
    conv2d,
    global_avg_pool,
    maxpool2d,
    relu,
    softmax,
)
from .training import (
    AdamState,
    TrainConfig,
    adam_step,
    cross_entropy,
    evaluate,
    run_training,
    train_epoch,
)

__version__ = "0.1.0"
