import json

import pytest

from ccfactor.autodiff import ValidationError
from ccfactor.config import EncoderSettings, OptimizerConfig, RunConfig, full_scale_preset
from ccfactor.factorizer import FactorizerConfig
from ccfactor.objectives import ContrastiveConfig, LossWeights

CORPUS = {"n_utterances": 20, "seed": 1}


def test_defaults_follow_published_hyperparameters():
    cfg = RunConfig(corpus=CORPUS)
    assert cfg.pi_mask == 0.15
    assert cfg.weights == LossWeights(lambda_mi=0.1, lambda_contrast=0.3)
    assert cfg.encoder.dropout == 0.1
    assert OptimizerConfig().lr == 3e-4
    preset = full_scale_preset()
    assert preset.factorizer.F == 512 and preset.optimizer.lr == 3e-4


def test_json_round_trip(tmp_path):
    cfg = RunConfig(
        corpus=CORPUS,
        encoder=EncoderSettings(kind="recurrent", hidden=8, layers=1, E=8),
        contrastive=ContrastiveConfig(M=4, include_positive_in_denominator=False),
        optimizer=OptimizerConfig(lr=1e-3, schedule="warmup_hold", warmup_steps=10),
    )
    cfg.save(tmp_path / "c.json")
    back = RunConfig.load(tmp_path / "c.json")
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_hash_ignores_output_location_only():
    cfg = RunConfig(corpus=CORPUS)
    assert cfg.with_(out_dir="elsewhere").config_hash() == cfg.config_hash()
    assert cfg.with_(seed=1).config_hash() != cfg.config_hash()
    assert cfg.with_(pi_mask=0.2).config_hash() != cfg.config_hash()


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError, match="bogus"):
        RunConfig.from_dict({"corpus": CORPUS, "bogus": 1})
    with pytest.raises(ValidationError, match="LossWeights.*lambda_ctx"):
        RunConfig.from_dict({"corpus": CORPUS, "weights": {"lambda_mi": 0.1, "lambda_ctx": 2}})


def test_bad_json_file(tmp_path):
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        RunConfig.load(tmp_path / "c.json")


@pytest.mark.parametrize(
    "changes",
    [
        dict(corpus=None),
        dict(manifest="m.jsonl"),
        dict(pi_mask=1.0),
        dict(batch_size=0),
        dict(eval_fraction=1.0),
        dict(contrastive=ContrastiveConfig(M=32)),
        dict(stack=2),
    ],
)
def test_invalid_configs(changes):
    with pytest.raises(ValidationError):
        RunConfig(**{"corpus": CORPUS, **changes})


@pytest.mark.parametrize(
    "build",
    [
        lambda: EncoderSettings(kind="transformer"),
        lambda: EncoderSettings(dropout=1.0),
        lambda: OptimizerConfig(lr=0.0),
        lambda: OptimizerConfig(schedule="cosine"),
        lambda: LossWeights(lambda_mi=-0.1),
        lambda: FactorizerConfig(output_activation="relu"),
    ],
)
def test_component_validation(build):
    with pytest.raises(ValidationError):
        build()


def test_warmup_schedule():
    opt = OptimizerConfig(lr=1e-3, schedule="warmup_hold", warmup_steps=4)
    assert [opt.lr_at(s) for s in (1, 2, 4, 100)] == pytest.approx([2.5e-4, 5e-4, 1e-3, 1e-3])
    assert OptimizerConfig(lr=1e-3).lr_at(1) == 1e-3


def test_to_json_is_canonical():
    cfg = RunConfig(corpus=CORPUS)
    assert json.loads(cfg.to_json()) == cfg.to_dict()
    assert cfg.to_json() == RunConfig.from_dict(json.loads(cfg.to_json())).to_json()
