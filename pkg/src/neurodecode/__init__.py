"""Two-stage EEG decoding: masked-reconstruction pretraining, then
contrastive alignment of EEG, image, and text embeddings, with zero-shot
retrieval and temporal/spatial/spectral analyses on top.
"""

from .align import TrimodalAligner, ensemble_predict, symmetric_infonce, total_loss
from .analyses import (
    AnalysisPipeline,
    BandSpec,
    WindowSpec,
    default_bands,
    default_window_grid,
    region_map_from_names,
    run_alignment_eval,
    spatial_region_analysis,
    spectral_band_analysis,
    temporal_window_analysis,
)
from .config import ConfigError
from .containers import ContainerFormatError, read_container, write_container
from .encoder import EEGEncoder, EncoderConfig, TsConvConfig
from .evaluation import rsa_matrix, text_retrieval, zero_shot_retrieval
from .features import FeatureBank, load_bank, save_bank
from .preprocessing import EEGPreprocessor, PreprocessConfig, preprocess
from .pretrain import MaskedReconstructionPretrainer, transfer_weights
from .splits import split_train_val
from .stats import holm_adjust, wilcoxon_exact, wilcoxon_holm
from .synthetic import SyntheticSpec, generate_synthetic
from .trials import TrialTensor, average_repetitions, load_trials, save_trials, zscore_trials

__version__ = "0.1.0"

__all__ = [
    "AnalysisPipeline",
    "BandSpec",
    "ConfigError",
    "ContainerFormatError",
    "EEGEncoder",
    "EEGPreprocessor",
    "EncoderConfig",
    "FeatureBank",
    "MaskedReconstructionPretrainer",
    "PreprocessConfig",
    "SyntheticSpec",
    "TrialTensor",
    "TrimodalAligner",
    "TsConvConfig",
    "WindowSpec",
    "average_repetitions",
    "default_bands",
    "default_window_grid",
    "ensemble_predict",
    "generate_synthetic",
    "holm_adjust",
    "load_bank",
    "load_trials",
    "preprocess",
    "read_container",
    "region_map_from_names",
    "rsa_matrix",
    "run_alignment_eval",
    "save_bank",
    "save_trials",
    "spatial_region_analysis",
    "spectral_band_analysis",
    "split_train_val",
    "symmetric_infonce",
    "temporal_window_analysis",
    "text_retrieval",
    "total_loss",
    "transfer_weights",
    "wilcoxon_exact",
    "wilcoxon_holm",
    "write_container",
    "zero_shot_retrieval",
    "zscore_trials",
]
