"""Single-shot multi-span temporal activity detection.

Multi-scale default spans tiled over a temporal feature hierarchy, a
desk-scale trainable 3-D convolutional network with a joint
localization/classification/actionness objective, single-pass windowed
inference with temporal NMS, and mAP evaluation on synthetic untrimmed
videos.
"""

from .config import RunConfig
from .spans import (
    DefaultSpanGrid,
    MatchResult,
    Span,
    SpanGridConfig,
    decode_offsets,
    encode_offsets,
    match_spans,
    temporal_iou,
    tile_default_spans,
)
from .loss import (
    BatchTargets,
    LossReport,
    LossWeights,
    activity_confidence_loss,
    class_confidence_loss,
    hard_negative_mining,
    localization_loss,
    smooth_l1,
    total_loss,
)
from .net import (
    LayerSpec,
    Network,
    NetworkConfig,
    PredictionVector,
    SgdMomentum,
    load_model,
    network_forward,
    paper_scale,
    s3d_tiny,
    save_model,
    train_step,
)
from .infer import (
    Detection,
    WindowPlacement,
    detect_window,
    merge_windows,
    temporal_nms,
    to_absolute,
)
from .metrics import EvalConfig, PRCurve, average_precision, mean_ap
from .data import (
    Annotation,
    JitterSpec,
    SyntheticSpec,
    TrainingWindow,
    VideoRecord,
    generate_synthetic_dataset,
    generate_video,
    jitter,
    make_windows,
)

__version__ = "0.1.0"
