"""Few-shot pose-based sign classification with validation-score-conscious training."""
from .model import SpoterConfig, SpoterModel, SpoterParams, forward, init_params, predict_topk
from .pose_data import ClassMapping, Dataset, GlossVocabulary, PoseSequence, load_dataset, map_labels, save_dataset
from .preprocess import AugmentationDistribution, augment, normalize_sequence
from .training import EpochStats, TrainConfig, VsctConfig, evaluate, train

__version__ = "0.1.0"
