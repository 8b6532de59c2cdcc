"""Wildlife-fence pipeline: insulator segmentation, fence-type classification,
and insulator detection, on a small from-scratch autodiff core."""

from .errors import (
    AnnotationError,
    ConfigError,
    DataError,
    DimensionError,
    EmptyInputError,
    FencePipeError,
    GraphError,
    NonFiniteError,
    SceneSpecError,
    WeightsFormatError,
    WeightsVersionError,
)
from .tensor import (
    Tensor,
    backward,
    binary_cross_entropy_loss,
    concat_channels,
    conv1x1,
    conv2d,
    crop_center,
    cross_entropy_loss,
    dense,
    flatten,
    grad_check,
    maxpool2,
    relu,
    sigmoid,
    softmax,
    soft_dice_loss,
    upconv2,
)
from .models import (
    ClassifierConfig,
    LayerSpec,
    ModelGraph,
    UNetConfig,
    build_classifier,
    build_unet,
    clone_model,
    forward,
    param_count,
    zero_grads,
)
from .optim import (
    AdamState,
    LogRow,
    MetaConfig,
    MetaTask,
    TrainingLog,
    adam_step,
    evaluate_classifier,
    evaluate_segmentation,
    inner_adapt,
    meta_outer_step,
    sgd_step,
    train,
)
from .datapipe import (
    AugmentConfig,
    AugmentPlan,
    ManifestEntry,
    Region,
    SceneImage,
    TileGrid,
    apply_augment,
    augment,
    concat_masks,
    filter_positive,
    import_annotations,
    load_annotations,
    load_image,
    load_manifest,
    load_mask,
    plan_augment,
    rasterize_regions,
    reassemble,
    resize_for_classification,
    save_annotations,
    save_image,
    save_manifest,
    save_mask,
    slice_image,
    split_dataset,
    union_masks,
)
from .metrics import (
    ClassReport,
    ConfusionMatrix,
    class_report,
    confusion_matrix,
    dice,
    iou,
    miou,
    pixel_accuracy,
)
from .detect import (
    BBox,
    Blob,
    bbox_of,
    binarize,
    detect_boxes,
    find_components,
    map_to_global,
    render_overlay,
    residual_mask,
)
from .synthgen import GroundTruth, SceneSpec, gen_dataset, gen_scene, make_episode
from .weights import load_weights, read_header, save_weights

__version__ = "0.1.0"
