"""scikit-learn style front end.

``MomentRetriever`` keeps every hyperparameter as a constructor argument
(so ``get_params``/``set_params``/``clone`` work), learns from point
annotations in ``fit``, indexes videos offline in ``build_index`` and
answers queries in ``predict``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .encoders import EncoderConfig
from .index import Retriever, build_index
from .metrics import recall_at
from .model import encode_text
from .training import TrainConfig, train
from .validation import check_point_samples, check_queries, check_videos


class MomentRetriever(BaseEstimator):
    """Point-supervised moment retrieval with an offline concept index.

    Parameters mirror :class:`TrainConfig` and :class:`EncoderConfig`;
    ``video_dim`` and ``vocab_size`` are inferred from the data when left
    as ``None``.
    """

    def __init__(self, hidden_dim=32, layers=2, heads=4, n_concepts=4, max_video_len=48,
                 max_query_len=20, text_dim=None, ff_mult=2, decoder_layers=1,
                 video_dim=None, vocab_size=None, gamma=9.0, v_max=0.55, n_scales=3, centers=8,
                 alpha1=0.2, alpha2=0.1, alpha3=0.1, alpha4=0.2, beta1=1.0, beta2=1.0,
                 lr=4e-4, batch_size=32, epochs=30, patience=5, mask_ratio=0.5, nms_iou=0.7,
                 sim_mode="rowwise", ablate=(), random_state=0):
        self.hidden_dim = hidden_dim
        self.layers = layers
        self.heads = heads
        self.n_concepts = n_concepts
        self.max_video_len = max_video_len
        self.max_query_len = max_query_len
        self.text_dim = text_dim
        self.ff_mult = ff_mult
        self.decoder_layers = decoder_layers
        self.video_dim = video_dim
        self.vocab_size = vocab_size
        self.gamma = gamma
        self.v_max = v_max
        self.n_scales = n_scales
        self.centers = centers
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.alpha3 = alpha3
        self.alpha4 = alpha4
        self.beta1 = beta1
        self.beta2 = beta2
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.mask_ratio = mask_ratio
        self.nms_iou = nms_iou
        self.sim_mode = sim_mode
        self.ablate = ablate
        self.random_state = random_state

    def _make_config(self, video_dim, vocab_size) -> TrainConfig:
        enc = EncoderConfig(
            hidden_dim=self.hidden_dim, layers=self.layers, heads=self.heads,
            max_video_len=self.max_video_len, max_query_len=self.max_query_len,
            n_concepts=self.n_concepts, video_dim=video_dim,
            text_dim=self.text_dim or self.hidden_dim, vocab_size=vocab_size,
            ff_mult=self.ff_mult, decoder_layers=self.decoder_layers, seed=self.random_state)
        return TrainConfig(
            alpha1=self.alpha1, alpha2=self.alpha2, alpha3=self.alpha3, alpha4=self.alpha4,
            beta1=self.beta1, beta2=self.beta2, lr=self.lr, batch_size=self.batch_size,
            epochs=self.epochs, patience=self.patience, mask_ratio=self.mask_ratio,
            seed=self.random_state, gamma=self.gamma, v_max=self.v_max, n_scales=self.n_scales,
            centers=self.centers, nms_iou=self.nms_iou, sim_mode=self.sim_mode,
            ablate=tuple(self.ablate), encoder=enc)

    def fit(self, X, y=None, validation=None, log_path=None):
        """Train on ``PointSample`` records ``X``; ``y`` is ignored.

        ``validation`` is an optional ``(videos, interval_samples)`` pair used
        for held-out R@1 logging and early stopping.
        """
        samples = check_point_samples(X)
        video_dim = self.video_dim or samples[0].video.dim
        vocab_size = self.vocab_size or 1 + max(max(s.query.ids) for s in samples)
        self.config_ = self._make_config(video_dim, vocab_size)
        result = train(samples, self.config_, validation=validation, log_path=log_path)
        self.model_ = result.model
        self.train_log_ = result.log
        self.n_features_in_ = video_dim
        self.index_ = None
        return self

    def build_index(self, videos):
        """Encode ``videos`` under every grid anchor; keeps and returns the index."""
        check_is_fitted(self, "model_")
        videos = check_videos(videos, self.n_features_in_, self.max_video_len)
        cfg = self.config_
        self.index_ = build_index(self.model_, videos, cfg.centers, cfg.n_scales, cfg.v_max,
                                  cfg.gamma)
        self._retriever = Retriever(self.index_, self.model_, cfg.sim_mode)
        return self.index_

    def predict(self, queries, topk: int = 5, nms_iou: Optional[float] = None):
        """Ranked moments per query; queries are ``IntervalSample`` or ``(video_id, QueryTokens)``."""
        check_is_fitted(self, ("model_", "index_"))
        if self.index_ is None:
            raise ValueError("call build_index before predict")
        nms_iou = self.nms_iou if nms_iou is None else nms_iou
        return [self._retriever.query(vid, q, topk, nms_iou) for vid, q in check_queries(queries)]

    def transform(self, queries):
        """Text concepts as ``(n_queries, n_concepts, hidden_dim)``."""
        check_is_fitted(self, "model_")
        with torch.no_grad():
            return np.stack([encode_text(self.model_, q)[0].numpy()
                             for _, q in check_queries(queries)])

    def score(self, X, y=None, k: int = 1, m: float = 0.5):
        """R@k, IoU=m over ``IntervalSample`` records."""
        preds = self.predict(X, topk=k)
        return recall_at(preds, [(s.start, s.end) for s in X], k, m)
