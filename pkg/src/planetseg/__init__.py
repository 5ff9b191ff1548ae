"""Ensemble placental MRI segmentation: U-Net + SegNeXt-S with affine
test-time augmentation, patient-grouped cross-validation, and a paired
statistical evaluation protocol."""

from .dataio import (  # noqa: F401
    Canvas,
    DatasetSplit,
    ImageSample,
    PreparedSample,
    generate_synthetic,
    load_dataset,
    prepare_samples,
    split_by_patient,
    standardize,
)
from .geometry import (  # noqa: F401
    AffineParams,
    AffineRangeConfig,
    invert,
    sample_affine,
    to_matrix,
    warp,
)
from .inference import (  # noqa: F401
    EnsemblePrediction,
    TTAConfig,
    planet_s_predict,
    predict_dataset,
    tta_predict,
)
from .models import (  # noqa: F401
    Predictor,
    SegNeXtConfig,
    build_segnext_s,
    build_unet,
    load_checkpoint,
)
from .objectives import (  # noqa: F401
    LossValue,
    MetricsRecord,
    StatsResult,
    bce_loss,
    combined_loss,
    count_cc,
    hard_iou,
    paired_t_test,
    soft_iou_loss,
    wilcoxon_signed_rank,
)
from .training import (  # noqa: F401
    Checkpoint,
    FoldPlan,
    TrainConfig,
    cross_validate,
    make_folds,
    train_one,
)
