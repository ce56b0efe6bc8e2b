"""Supervised vector-quantized autoencoder (one learned code per class) in numpy."""

from .analysis import (
    AnalysisReport, CommunityPartition, PartnerGraph, class_mean_oracle, code_distance_matrix,
    decode_codes, evaluate, louvain, modularity, nearest_partner_graph, perplexity,
)
from .data import (
    Dataset, load_labeled_csv, load_mnist_idx, make_blobs, rescale_output, stratified_split,
)
from .model import (
    AdamState, ClassLatentStats, ForwardTrace, Gradients, Model, ModelConfig, adam_step,
    backward, decode, dense_matrix_config, encode, estimate_class_latent_stats, generate,
    init_model, loss_forward, mnist_config, nearest_code, quantize,
)
from .numeric import Rng
from .training import TrainHistory, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
