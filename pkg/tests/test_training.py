import json

import numpy as np
import pytest
import torch

from cfmr.exceptions import InputError, NumericalError, ValidationError
from cfmr.model import ConceptModel
from cfmr.training import TrainConfig, batch_losses, heldout_recall, train

from conftest import random_point_samples
from helpers import e2e_directional_error, e2e_entrywise_error, tiny_encoder_config


class TestConfig:
    def test_defaults_valid(self):
        cfg = TrainConfig()
        assert cfg.alpha1 > cfg.alpha2 and cfg.alpha3 <= cfg.alpha4
        assert cfg.lr == 4e-4 and cfg.batch_size == 32

    @pytest.mark.parametrize("kw", [dict(alpha1=0.1, alpha2=0.1), dict(alpha1=0.1, alpha2=0.3),
                                    dict(alpha3=0.3, alpha4=0.2), dict(lr=0.0),
                                    dict(mask_ratio=0.0), dict(sim_mode="dot"),
                                    dict(ablate=("nope",)), dict(beta1=-1.0)])
    def test_rejected(self, kw):
        with pytest.raises(ValidationError):
            TrainConfig(**kw)

    def test_equal_alignment_margins_allowed(self):
        TrainConfig(alpha3=0.2, alpha4=0.2)

    def test_yaml_round_trip(self, tmp_path):
        import yaml
        cfg = TrainConfig(lr=1e-3, ablate=("cma",), encoder=tiny_encoder_config())
        path = tmp_path / "c.yaml"
        path.write_text(yaml.safe_dump(cfg.to_dict()))
        assert TrainConfig.load(path) == cfg

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            TrainConfig.from_dict({"alpha5": 1.0})

    def test_validation_error_is_value_error(self):
        with pytest.raises(ValueError):
            TrainConfig(alpha1=0.0)


def _cfg(**kw):
    base = dict(encoder=tiny_encoder_config(), v_max=0.5, batch_size=4, epochs=3)
    base.update(kw)
    return TrainConfig(**base)


class TestBatchLosses:
    def test_components_finite_and_non_negative(self):
        cfg = _cfg()
        batch = random_point_samples(cfg.encoder, 4)
        parts = batch_losses(ConceptModel(cfg.encoder), batch, cfg, np.random.default_rng(0))
        for k in ("conc", "rec", "pcl", "cma", "total"):
            assert torch.isfinite(parts[k]) and parts[k].item() >= 0
        assert parts["optimal"].shape == (4,)
        assert ((parts["optimal"] >= 0) & (parts["optimal"] < cfg.n_scales)).all()

    def test_total_is_weighted_sum(self):
        cfg = _cfg(beta1=0.5, beta2=2.0)
        batch = random_point_samples(cfg.encoder, 3)
        p = batch_losses(ConceptModel(cfg.encoder), batch, cfg, np.random.default_rng(0))
        want = p["conc"] + p["cma"] + 0.5 * p["rec"] + 2.0 * p["pcl"]
        assert p["total"].item() == pytest.approx(want.item(), abs=1e-12)

    def test_ablation_switches(self):
        cfg = _cfg(ablate=("cma", "rec"))
        batch = random_point_samples(cfg.encoder, 3)
        p = batch_losses(ConceptModel(cfg.encoder), batch, cfg, np.random.default_rng(0))
        assert p["total"].item() == pytest.approx((p["conc"] + p["pcl"]).item(), abs=1e-12)

    def test_boundary_point_without_negatives(self):
        cfg = _cfg(v_max=1.0)
        batch = random_point_samples(cfg.encoder, 2)
        for s in batch:
            s.point = 0.5  # complements [0, 0] and [1, 1] are both dropped
        p = batch_losses(ConceptModel(cfg.encoder), batch, cfg, np.random.default_rng(0))
        assert torch.isfinite(p["total"])


class TestGradients:
    def test_directional_over_seeds(self):
        errors = [e2e_directional_error(seed) for seed in range(100)]
        assert max(errors) < 1e-3

    def test_per_tensor(self):
        assert max(e2e_directional_error(seed, per_tensor=True) for seed in range(3)) < 1e-3

    @pytest.mark.slow
    def test_every_parameter_entry(self):
        assert e2e_entrywise_error(0) < 1e-3


class TestTrain:
    def test_empty_corpus(self):
        with pytest.raises(InputError):
            train([], _cfg())

    def test_dimension_mismatch(self, small_cfg):
        with pytest.raises(InputError):
            train(random_point_samples(small_cfg, 2), _cfg())

    def test_single_sample_overfit(self):
        # all content tokens masked so the objective is the same every epoch
        cfg = _cfg(epochs=10, lr=1e-3, batch_size=1, mask_ratio=1.0)
        result = train(random_point_samples(cfg.encoder, 1, seed=4), cfg)
        totals = [e["L_total"] for e in result.log]
        assert len(totals) == 10
        assert all(b < a for a, b in zip(totals, totals[1:])), totals

    def test_frozen_encoders_alignment_only(self):
        cfg = _cfg(epochs=10, lr=1e-3, batch_size=2, beta1=0.0, beta2=0.0, freeze_encoders=True)
        corpus = random_point_samples(cfg.encoder, 2, seed=1)
        model = ConceptModel(cfg.encoder)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        log = train(corpus, cfg, model=model).log
        first, last = log[0], log[-1]
        assert last["L_conc"] + last["L_cma"] < first["L_conc"] + first["L_cma"]
        for n, p in model.named_parameters():
            if ".mlp." not in n:
                assert torch.equal(p, before[n]), n
        assert all(p.requires_grad for p in model.parameters())

    def test_nan_aborts_with_dump(self):
        cfg = _cfg()
        model = ConceptModel(cfg.encoder)
        with torch.no_grad():
            model.video_encoder.proj.weight[0, 0] = float("nan")
        with pytest.raises(NumericalError) as info:
            train(random_point_samples(cfg.encoder, 3), cfg, model=model)
        assert info.value.exit_code == 3
        assert "video_ids" in info.value.dump and "losses" in info.value.dump

    def test_identical_seeds_identical_logs(self, tmp_path):
        cfg = _cfg(epochs=2)
        corpus = random_point_samples(cfg.encoder, 6, seed=2)
        a = train(corpus, cfg, log_path=tmp_path / "a.jsonl")
        b = train(corpus, cfg, log_path=tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert a.model.fingerprint() == b.model.fingerprint()

    def test_log_format(self, tmp_path):
        cfg = _cfg(epochs=2)
        train(random_point_samples(cfg.encoder, 4), cfg, log_path=tmp_path / "log.jsonl")
        rows = [json.loads(line) for line in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in rows] == [1, 2]
        assert set(rows[0]) == {"epoch", "L_conc", "L_rec", "L_pcl", "L_cma", "L_total", "heldout_r1"}

    def test_early_stopping_restores_best(self, mini_corpus):
        enc = tiny_encoder_config()
        enc = type(enc)(**{**enc.to_dict(), "max_video_len": 24, "video_dim": 8,
                           "vocab_size": 40, "max_query_len": 8})
        cfg = TrainConfig(encoder=enc, epochs=6, patience=1, batch_size=4, centers=4)
        validation = (mini_corpus.test_videos, mini_corpus.test)
        result = train(mini_corpus.train, cfg, validation=validation)
        scores = [e["heldout_r1"] for e in result.log]
        assert all(s is not None for s in scores)
        assert heldout_recall(result.model, validation, cfg) == pytest.approx(max(scores))
