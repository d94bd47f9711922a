"""Point-supervised video moment retrieval with Gaussian temporal anchors
and an offline concept index."""

from .anchors import (anchor_to_interval, density, inference_anchor_grid,
                      training_anchor_set)
from .encoders import EncoderConfig, diversity_loss, make_concepts
from .estimator import MomentRetriever
from .flops import flops_report
from .index import ConceptIndex, Retriever, build_index, load_index, query, save_index
from .metrics import EvalResult, evaluate, iou, recall_at
from .model import ConceptModel, encode_text, encode_video, load_model, save_model
from .objectives import cma_loss, sim, total_loss
from .reconstructor import mask_query, pcl_loss, reconstruction_loss, select_optimal_anchor
from .synthetic import SyntheticSpec, generate_corpus
from .training import TrainConfig, train
from .types import (FeatureSequence, GaussianAnchor, IntervalSample, PointSample,
                    QueryTokens, RankedMoment)
from .vocab import Vocabulary

__version__ = "0.1.0"
