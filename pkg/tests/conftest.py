import numpy as np
import pytest
import torch

from cfmr.encoders import EncoderConfig
from cfmr.model import ConceptModel
from cfmr.synthetic import SyntheticSpec, generate_corpus
from cfmr.types import FeatureSequence, PointSample, QueryTokens

torch.set_num_threads(1)


@pytest.fixture
def tiny_cfg():
    return EncoderConfig(hidden_dim=8, layers=1, heads=2, max_video_len=6, max_query_len=4,
                         n_concepts=2, video_dim=3, text_dim=8, vocab_size=12, seed=3)


@pytest.fixture
def small_cfg():
    return EncoderConfig(hidden_dim=16, layers=2, heads=2, max_video_len=24, max_query_len=10,
                         n_concepts=3, video_dim=8, text_dim=16, vocab_size=40, seed=1)


@pytest.fixture
def small_model(small_cfg):
    return ConceptModel(small_cfg).eval()


def random_point_samples(cfg, n, seed=0, length=None):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        t = length or cfg.max_video_len
        feats = rng.standard_normal((t, cfg.video_dim))
        q_len = int(rng.integers(2, cfg.max_query_len + 1))
        ids = rng.integers(2, cfg.vocab_size, size=q_len)
        content = [True] + list(rng.random(q_len - 1) < 0.6)
        out.append(PointSample(FeatureSequence(f"v{i}", feats, 10.0), QueryTokens(ids, content),
                               float(rng.uniform(0.1, 0.9))))
    return out


@pytest.fixture(scope="session")
def mini_corpus():
    spec = SyntheticSpec(videos=12, test_videos=4, length=24, feature_dim=8, vocab_size=40,
                         events_per_video=2, noise=0.3, seed=5)
    return generate_corpus(spec)
