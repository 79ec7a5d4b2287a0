"""Cross-batch memory (XBM) for pair-based deep metric learning, in numpy.

Modules
-------
tensor     float64 matmul, L2 normalization and a hand-differentiated MLP
losses     pair-weighting losses (contrastive, triplet, multi-similarity)
memory     the FIFO embedding memory and the memory-augmented loss
train      PK sampling, Adam, and the warm-up / memory training loop
drift      feature drift and stale-embedding gradient error
retrieval  Recall@K and valid-negative mining reports
data       datasets, synthetic clusters, file formats
"""

from .data import LabeledDataset, load_matrix, save_matrix, synth_clusters
from .drift import feature_drift, lemma1_check, take_snapshot
from .losses import LossHyperparams, gpw_loss, pair_weights, similarity
from .memory import XbmConfig, XbmState, xbm_init, xbm_loss, xbm_stats, xbm_update
from .retrieval import recall_at_k
from .tensor import EmbeddingNet, init_params, l2_normalize, matmul, net_backward, net_forward
from .train import TrainConfig, adam_step, pk_sample, train

__version__ = "0.1.0"
