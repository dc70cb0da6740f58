"""Active-learning dataset distillation for LiDAR range-image segmentation."""

__version__ = "0.1.0"

from .al_loop import AlConfig, AlData, PoolState, analyze_tt_da, init_pools, run, run_step
from .augmentation import AugKind, AugmentationSpec, compose
from .dataset_io import (
    AlRunRecord,
    DatasetManifest,
    LabelMap,
    PointCloud,
    StepRecord,
    parse_labels,
    parse_point_cloud,
    split_pool,
)
from .errors import RangeAlError
from .metrics import ConfusionMatrix, LearningCurve, confusion, labeling_efficiency, mean_iou
from .projection import IGNORE, PixelScoreMap, RangeImage, SensorConfig, project, valid_fraction
from .rng import RngStream
from .scorer import ScorerConfig, load_external_tensor, predict_mc, store_tensor, train
from .synth_data import SceneSpec, generate_pool
from .uncertainty import (
    HeuristicKind,
    McProbTensor,
    SampleScore,
    aggregate,
    bald_map,
    certainty_map,
    entropy_map,
    mean_prediction,
    rank_and_select,
    variance_map,
)
