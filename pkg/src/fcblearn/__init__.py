"""Forward-Cooperation-Backward learning for autoencoder dimensionality reduction."""

from .datasets import (
    EncodedMatrix,
    LabeledDataset,
    build_training_matrix,
    embed_labels,
    parse_cifar10_bin,
    parse_idx,
    synth_blobs,
)
from .evaluation import (
    ClassificationReport,
    classification_metrics,
    gnb_fit_predict,
    knn_classify,
    trustworthiness,
)
from .ff import FFLayer, FFLayerConfig, goodness, layer_normalize, p_positive, pretrain_stack
from .meud import (
    BandWeights,
    ModelParams,
    NetworkConfig,
    Variant,
    backward,
    band_apply,
    extract_embedding,
    forward,
    init_params,
    load_checkpoint,
    make_widths,
    save_checkpoint,
)
from .training import AdamState, TrainConfig, TrainReport, adam_step, mse_cost, train

__version__ = "0.1.0"
