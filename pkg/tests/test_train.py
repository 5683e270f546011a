import json

import numpy as np
import pytest

from ccfactor.autodiff import Graph, ValidationError
from ccfactor.config import EncoderSettings, OptimizerConfig, RunConfig
from ccfactor.factorizer import FactorizerConfig
from ccfactor.metrics import MetricsReport
from ccfactor.model import FactorModel, FeatureStats, make_batch, stacked_features
from ccfactor.noise import ALPHA_GRID, MixSpec, SyntheticCorpusSpec, generate_synthetic_corpus
from ccfactor.objectives import ContrastiveConfig, LossWeights
from ccfactor.train import load_checkpoint, read_trace, run_evaluation, run_training


def tiny_config(out_dir, **changes):
    base = dict(
        corpus=SyntheticCorpusSpec(n_utterances=16, n_tokens=3, n_contexts=2, seed=2).to_dict(),
        encoder=EncoderSettings(hidden=16, layers=1, E=16, radius=1),
        factorizer=FactorizerConfig(F=8, hidden=16, hidden_layers=1),
        contrastive=ContrastiveConfig(M=2),
        batch_size=4,
        epochs=2,
        eval_fraction=0.5,
        probe_max_iter=50,
        out_dir=str(out_dir),
    )
    base.update(changes)
    return RunConfig(**base)


def test_identical_configs_give_identical_traces(tmp_path):
    a = run_training(tiny_config(tmp_path / "a"), evaluate=False)
    b = run_training(tiny_config(tmp_path / "b"), evaluate=False)
    assert (a.run_dir / "trace.csv").read_bytes() == (b.run_dir / "trace.csv").read_bytes()
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    assert len(a.trace) == 2 * 2
    assert read_trace(a.run_dir / "trace.csv") == a.trace


def test_resume_reproduces_uninterrupted_run(tmp_path):
    cfg = tiny_config(tmp_path / "full", epochs=3)
    full = run_training(cfg, evaluate=False)
    part_cfg = cfg.with_(out_dir=str(tmp_path / "part"))
    first = run_training(part_cfg, stop_after_epoch=0, evaluate=False)
    resumed = run_training(part_cfg, resume=first.checkpoint, evaluate=False)
    assert (full.run_dir / "trace.csv").read_bytes() == (resumed.run_dir / "trace.csv").read_bytes()
    for k, v in full.params.items():
        assert np.array_equal(v, resumed.params[k]), k


def test_resume_refuses_other_config(tmp_path):
    first = run_training(tiny_config(tmp_path / "a", epochs=1), evaluate=False)
    other = tiny_config(tmp_path / "b", epochs=1, pi_mask=0.2)
    with pytest.raises(ValidationError, match="different configuration"):
        run_training(other, resume=first.checkpoint)


def test_checkpoint_round_trip(tmp_path):
    result = run_training(tiny_config(tmp_path, epochs=1), evaluate=False)
    ck = load_checkpoint(result.checkpoint)
    assert ck.epoch == 0 and ck.step == 2 and ck.state.step == 2
    assert ck.config == tiny_config(tmp_path, epochs=1)
    for k, v in result.params.items():
        assert np.array_equal(ck.params[k], v)
    assert set(ck.state.m) == set(result.params)


def test_plain_ctc_trainer_learns(tmp_path):
    cfg = tiny_config(
        tmp_path,
        corpus=SyntheticCorpusSpec(n_utterances=10, n_tokens=3, n_contexts=2, seed=5).to_dict(),
        weights=LossWeights(0.0, 0.0),
        pi_mask=0.0,
        eval_fraction=0.0,
        batch_size=10,
        epochs=200,
    )
    trace = run_training(cfg, evaluate=False).trace
    assert len(trace) == 200
    asr = np.array([r["L_asr"] for r in trace])
    assert asr[-20:].mean() < 0.5 * asr[:20].mean()
    assert np.allclose([r["L_total"] for r in trace], asr)


def test_evaluation_grid_rows_and_probes(tmp_path):
    result = run_training(tiny_config(tmp_path))
    report = json.loads((tmp_path / "report.json").read_text())
    assert {p["source"] for p in report["probes"]} == {"z_context", "z_content", "embedding"}
    grid = run_evaluation(result.checkpoint, result.eval_manifest, [MixSpec(a) for a in ALPHA_GRID])
    assert [row["alpha"] for row in grid.rows] == list(ALPHA_GRID)
    clean = run_evaluation(result.checkpoint, result.eval_manifest)
    assert len(clean.rows) == 1 and clean.rows[0]["alpha"] == 0.0
    assert clean.rows[0] == grid.rows[0]
    assert MetricsReport.from_dict(json.loads(clean.to_json())) == clean


def test_probes_only_with_context_ids(tmp_path):
    result = run_training(tiny_config(tmp_path, epochs=1), evaluate=False)
    lines = result.eval_manifest.read_text().splitlines()
    stripped = tmp_path / "no_ctx" / "eval_manifest.jsonl"
    stripped.parent.mkdir()
    (stripped.parent / "vocab.txt").write_bytes((tmp_path / "vocab.txt").read_bytes())
    recs = [json.loads(line) for line in lines]
    for r in recs:
        r.pop("context_id")
    stripped.write_text("".join(json.dumps(r) + "\n" for r in recs))
    assert run_evaluation(result.checkpoint, result.eval_manifest).probes
    assert run_evaluation(result.checkpoint, stripped).probes == []


def test_vocabulary_mismatch(tmp_path):
    result = run_training(tiny_config(tmp_path, epochs=1), evaluate=False)
    elsewhere = tmp_path / "other"
    elsewhere.mkdir()
    (elsewhere / "vocab.txt").write_text("<blank>\nx\ny\n")
    (elsewhere / "manifest.jsonl").write_text(result.eval_manifest.read_text())
    with pytest.raises(ValidationError, match="vocabulary mismatch"):
        run_evaluation(result.checkpoint, elsewhere / "manifest.jsonl")


def test_gradient_flow_through_reversal_only(tmp_path):
    cfg = tiny_config(tmp_path)
    spec = SyntheticCorpusSpec.from_dict(cfg.corpus)
    utts = generate_synthetic_corpus(spec)[:4]
    feats = [stacked_features(u.waveform, cfg) for u in utts]
    stats = FeatureStats.fit(feats)
    model = FactorModel(cfg, len(spec.vocab))
    params = model.init_params()
    batch = make_batch([stats.apply(f) for f in feats], [u.tokens for u in utts], [u.context_id for u in utts],
                       [u.id for u in utts], cfg, None)

    def grads(mode, term):
        g = Graph(grl_mode=mode)
        nodes = g.bind(params)
        return g.backward(model.losses(g, nodes, batch, np.random.default_rng(0))[term])

    ctx_names = FactorModel.factor_param_names(params, "pi_context")
    rev, ident = grads("reverse", "L_m_content"), grads("identity", "L_m_content")
    assert any(np.abs(rev[k]).max() > 0 for k in ctx_names)
    for k in ctx_names:
        assert np.array_equal(rev[k], -ident[k]), k
    asr = grads("reverse", "L_asr")
    assert all(not np.any(asr.get(k, 0.0)) for k in ctx_names)


def test_data_errors_name_the_utterance(tmp_path):
    d = tmp_path / "corpus"
    d.mkdir()
    (d / "vocab.txt").write_text("<blank>\na\n")
    np.ones(100, dtype="<f4").tofile(d / "short.f32")
    np.random.default_rng(0).standard_normal(16000).astype("<f4").tofile(d / "ok.f32")
    (d / "manifest.jsonl").write_text(
        json.dumps({"id": "ok", "audio": "ok.f32", "transcript": "a"}) + "\n"
        + json.dumps({"id": "short-one", "audio": "short.f32", "transcript": "a"}) + "\n"
    )
    cfg = tiny_config(tmp_path / "run", corpus=None, manifest=str(d / "manifest.jsonl"))
    with pytest.raises(ValidationError, match="short-one"):
        run_training(cfg)


def test_learning_rate_schedule_reaches_optimizer(tmp_path):
    cfg = tiny_config(tmp_path, epochs=1, optimizer=OptimizerConfig(lr=1e-3, schedule="warmup_hold", warmup_steps=100))
    slow = run_training(cfg, evaluate=False).params
    fast = run_training(cfg.with_(optimizer=OptimizerConfig(lr=1e-3), out_dir=str(tmp_path / "f")), evaluate=False).params
    init = FactorModel(cfg, 4).init_params()
    k = "factorizer/pi_content/0/W"
    assert np.abs(slow[k] - init[k]).max() < np.abs(fast[k] - init[k]).max()
