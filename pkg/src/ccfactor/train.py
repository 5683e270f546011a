"""Deterministic training loop, checkpoints, and the evaluation protocol.

All randomness is derived from ``(config.seed, purpose, epoch, step/utterance)``
through ``numpy.random.SeedSequence``; nothing depends on hidden generator
state, so resuming from an epoch checkpoint replays the same trace.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Graph, NumericalError, ValidationError
from .checkpoint import atomic_write, load_tensors, save_tensors
from .config import RunConfig
from .metrics import EditBreakdown, MetricsReport, edit_ops, greedy_ctc_decode, linear_probe
from .model import LOSS_NAMES, FactorModel, FeatureStats, make_batch, stacked_features
from .noise import (
    MixSpec,
    SyntheticCorpusSpec,
    Utterance,
    generate_synthetic_corpus,
    load_utterances,
    mix_features,
    mix_pairing,
    mix_utterances,
    peak_normalize,
    read_vocab,
    rms_normalize,
    write_vocab,
)
from .optim import AdamState, adam_step

log = logging.getLogger(__name__)

TRACE_FIELDS = ("step", "epoch") + LOSS_NAMES
_SEED_BATCHES, _SEED_STEP, _SEED_AUGMENT = 1, 2, 3


def derived_rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def derived_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1)[0])


# -- data ----------------------------------------------------------------------


def load_corpus(cfg: RunConfig) -> tuple[list[Utterance], list[str], SyntheticCorpusSpec | None]:
    if cfg.corpus is not None:
        spec = SyntheticCorpusSpec.from_dict(cfg.corpus)
        return generate_synthetic_corpus(spec), spec.vocab, spec
    manifest = Path(cfg.manifest)
    vocab = read_vocab(manifest.parent / "vocab.txt")
    return load_utterances(manifest, vocab), vocab, None


def split_indices(n: int, eval_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = derived_rng(seed, 0, 7).permutation(n)
    n_eval = int(round(eval_fraction * n))
    return np.sort(perm[n_eval:]), np.sort(perm[:n_eval])


def write_split_manifest(path: Path, utts: list[Utterance], indices, spec: SyntheticCorpusSpec | None) -> None:
    """Manifest of synthetic records (regenerated on load) or of the original audio paths."""
    lines = []
    for i in indices:
        u = utts[i]
        rec = {"id": u.id, "transcript": u.transcript, "context_id": u.context_id}
        if spec is not None:
            rec["synthetic"] = dict(spec.to_dict(), index=u.index)
        else:
            rec["audio"] = u.audio_path
        lines.append(json.dumps(rec, sort_keys=True))
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def make_batches(train_idx: np.ndarray, lengths: np.ndarray, batch_size: int, min_size: int, seed: int, epoch: int):
    """Shuffle, sort by length inside buckets of 4 batches, split, shuffle batch order."""
    rng = derived_rng(seed, _SEED_BATCHES, epoch)
    order = rng.permutation(train_idx)
    bucket = 4 * batch_size
    batches = []
    for start in range(0, len(order), bucket):
        chunk = order[start : start + bucket]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        for b in range(0, len(chunk), batch_size):
            part = chunk[b : b + batch_size]
            if len(part) >= min_size:
                batches.append(part)
    return [batches[i] for i in rng.permutation(len(batches))]


# -- checkpoints ---------------------------------------------------------------


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    state: AdamState
    stats: FeatureStats
    config: RunConfig
    vocab: list[str]
    epoch: int
    step: int
    config_hash: str
    path: Path | None = None


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    tensors = dict(ckpt.params)
    for k, v in ckpt.state.m.items():
        tensors[f"adam/m/{k}"] = v
    for k, v in ckpt.state.v.items():
        tensors[f"adam/v/{k}"] = v
    tensors["features/mean"] = ckpt.stats.mean
    tensors["features/std"] = ckpt.stats.std
    meta = {
        "format": "FCTM",
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config_hash,
        "vocab": ckpt.vocab,
        "epoch": ckpt.epoch,
        "step": ckpt.step,
        "adam_step": ckpt.state.step,
    }
    save_tensors(path, tensors)
    atomic_write(path.with_suffix(".json"), (json.dumps(meta, indent=2, sort_keys=True) + "\n").encode())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    meta_path = path.with_suffix(".json")
    if not meta_path.exists():
        raise ValidationError(f"checkpoint metadata {meta_path} missing")
    meta = json.loads(meta_path.read_text())
    tensors = load_tensors(path)
    params, m, v = {}, {}, {}
    for k, arr in tensors.items():
        if k.startswith("adam/m/"):
            m[k[7:]] = arr
        elif k.startswith("adam/v/"):
            v[k[7:]] = arr
        elif not k.startswith("features/"):
            params[k] = arr
    stats = FeatureStats(tensors["features/mean"], tensors["features/std"])
    cfg = RunConfig.from_dict(meta["config"])
    return Checkpoint(params, AdamState(meta["adam_step"], m, v), stats, cfg, meta["vocab"],
                      meta["epoch"], meta["step"], meta["config_hash"], path)


# -- trace ---------------------------------------------------------------------


def trace_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_FIELDS)
    for r in rows:
        w.writerow([r["step"], r["epoch"]] + [repr(float(r[k])) for k in LOSS_NAMES])
    return buf.getvalue()


def read_trace(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            row = {"step": int(r["step"]), "epoch": int(r["epoch"])}
            row.update({k: float(r[k]) for k in LOSS_NAMES})
            rows.append(row)
    return rows


# -- training ------------------------------------------------------------------


@dataclass
class TrainResult:
    run_dir: Path
    trace: list[dict]
    params: dict[str, np.ndarray]
    checkpoint: Path | None
    report: MetricsReport | None = None
    eval_manifest: Path | None = None
    extras: dict = field(default_factory=dict)


def train_step(model: FactorModel, params, state: AdamState, batch, cfg: RunConfig, rng, lr: float):
    g = Graph(grl_mode="reverse" if cfg.grl else "identity")
    nodes = g.bind(params)
    losses = model.losses(g, nodes, batch, rng)
    values = {k: float(v.value[0]) for k, v in losses.items()}
    total = values["L_total"]
    if not math.isfinite(total) or total > cfg.divergence_threshold:
        raise NumericalError(f"divergence: L_total={total!r} on utterances {batch.ids}")
    grads = g.backward(losses["L_total"])
    o = cfg.optimizer
    params, state = adam_step(params, grads, state, lr, o.beta1, o.beta2, o.eps)
    return params, state, values


def run_training(
    cfg: RunConfig,
    resume: str | Path | None = None,
    stop_after_epoch: int | None = None,
    evaluate: bool = True,
) -> TrainResult:
    """Train per ``cfg``; write ``trace.csv``, per-epoch checkpoints and ``report.json``.

    ``resume`` continues from an epoch checkpoint written by a run with the
    same config hash. ``stop_after_epoch`` ends the run early (simulated
    interruption) without touching the config.
    """
    run_dir = Path(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    utts, vocab, spec = load_corpus(cfg)
    if len(utts) < 2:
        raise ValidationError("corpus needs at least two utterances")
    feats_raw = []
    for u in utts:
        try:
            feats_raw.append(stacked_features(u.waveform, cfg))
        except ValidationError as exc:
            raise ValidationError(f"utterance {u.id}: {exc}") from None
    train_idx, eval_idx = split_indices(len(utts), cfg.eval_fraction, cfg.seed)
    stats = FeatureStats.fit([feats_raw[i] for i in train_idx])
    feats = [stats.apply(f) for f in feats_raw]
    lengths = np.array([len(f) for f in feats])

    write_vocab(run_dir / "vocab.txt", vocab)
    write_split_manifest(run_dir / "train_manifest.jsonl", utts, train_idx, spec)
    write_split_manifest(run_dir / "eval_manifest.jsonl", utts, eval_idx, spec)
    cfg.save(run_dir / "config.json")

    model = FactorModel(cfg, len(vocab))
    chash = cfg.config_hash()
    trace: list[dict] = []
    if resume is not None:
        ck = load_checkpoint(resume)
        if ck.config_hash != chash:
            raise ValidationError(f"checkpoint {resume} was written by a different configuration")
        params, state, start_epoch, step = ck.params, ck.state, ck.epoch + 1, ck.step
        prior = Path(resume).parent / "trace.csv"
        if prior.exists():
            trace = [r for r in read_trace(prior) if r["step"] <= step]
    else:
        params = model.init_params()
        state = AdamState.zeros_like(params)
        start_epoch, step = 0, 0

    ckpt_path = None
    min_size = max(1, cfg.contrastive.M)
    last_epoch = cfg.epochs - 1 if stop_after_epoch is None else min(cfg.epochs - 1, stop_after_epoch)
    for epoch in range(start_epoch, last_epoch + 1):
        batches = make_batches(train_idx, lengths, cfg.batch_size, min_size, cfg.seed, epoch)
        for b_i, idx in enumerate(batches):
            aug_seeds = [derived_seed(cfg.seed, _SEED_AUGMENT, epoch, i) for i in idx]
            batch = make_batch(
                [feats[i] for i in idx],
                [utts[i].tokens for i in idx],
                [utts[i].context_id for i in idx],
                [utts[i].id for i in idx],
                cfg,
                aug_seeds,
            )
            rng = derived_rng(cfg.seed, _SEED_STEP, epoch, b_i)
            params, state, values = train_step(model, params, state, batch, cfg, rng, cfg.optimizer.lr_at(step + 1))
            step += 1
            trace.append({"step": step, "epoch": epoch, **values})
        log.info("epoch %d step %d L_total %.4f", epoch, step, trace[-1]["L_total"] if trace else float("nan"))
        ckpt_path = run_dir / f"epoch_{epoch:03d}.fctm"
        save_checkpoint(ckpt_path, Checkpoint(params, state, stats, cfg, vocab, epoch, step, chash))
        atomic_write(run_dir / "trace.csv", trace_to_csv(trace).encode())

    result = TrainResult(run_dir, trace, params, ckpt_path, eval_manifest=run_dir / "eval_manifest.jsonl")
    finished = stop_after_epoch is None or stop_after_epoch >= cfg.epochs - 1
    if evaluate and finished and ckpt_path is not None and len(eval_idx):
        report = evaluate_utterances(model, params, stats, [utts[i] for i in eval_idx], cfg, probes=True)
        if trace:
            report.losses = {k: trace[-1][k] for k in LOSS_NAMES}
        report.to_json(run_dir / "report.json")
        result.report = report
    return result


# -- evaluation ----------------------------------------------------------------


def _pool(mats) -> np.ndarray:
    return np.stack([m.mean(axis=0) for m in mats])


def evaluate_utterances(
    model: FactorModel,
    params: dict[str, np.ndarray],
    stats: FeatureStats,
    utts: list[Utterance],
    cfg: RunConfig,
    mix_specs: Sequence[MixSpec] | None = None,
    probes: bool = True,
) -> MetricsReport:
    report = MetricsReport()
    raw = [stacked_features(u.waveform, cfg) for u in utts]
    specs = list(mix_specs) if mix_specs else [MixSpec(0.0)]
    clean_outputs = None
    for ms in specs:
        if ms.alpha == 0.0:
            mixed = raw
        else:
            partner = mix_pairing(len(utts), ms.seed)
            if ms.domain == "feature":
                mixed = [mix_features(raw[i], raw[partner[i]], ms.alpha) for i in range(len(utts))]
            else:
                norm = rms_normalize if ms.normalization == "rms" else peak_normalize
                mixed = [
                    stacked_features(
                        mix_utterances(norm(utts[i].waveform), norm(utts[partner[i]].waveform), ms.alpha), cfg
                    )
                    for i in range(len(utts))
                ]
        outputs = model.forward_eval(params, [stats.apply(f) for f in mixed])
        if ms.alpha == 0.0:
            clean_outputs = outputs
        total = EditBreakdown(0, 0, 0, 0)
        for u, (_, _, _, logits) in zip(utts, outputs):
            total = total + edit_ops(u.tokens, greedy_ctc_decode(logits))
        report.rows.append({
            "alpha": ms.alpha,
            "domain": ms.domain,
            "wer": total.wer,
            "substitutions": total.substitutions,
            "insertions": total.insertions,
            "deletions": total.deletions,
            "reference_length": total.reference_length,
        })
    ids = [u.context_id for u in utts]
    has_ctx = all(c is not None for c in ids) and len(set(ids)) > 1
    if has_ctx and min(ids.count(c) for c in set(ids)) < 2:
        log.warning("skipping probes: some context has fewer than two evaluation utterances")
        has_ctx = False
    if probes and has_ctx:
        if clean_outputs is None:
            clean_outputs = model.forward_eval(params, [stats.apply(f) for f in raw])
        it = cfg.probe_max_iter
        for source, k in (("z_context", 2), ("z_content", 1), ("embedding", 0)):
            feats = _pool([o[k] for o in clean_outputs])
            report.probes.append(linear_probe(feats, ids, cfg.seed, max_iter=it, source=source))
    return report


def run_evaluation(
    checkpoint: str | Path,
    manifest: str | Path,
    mix_spec: MixSpec | Sequence[MixSpec] | None = None,
    probes: bool = True,
) -> MetricsReport:
    """Greedy-CTC error rates (optionally across an alpha grid) and disentanglement probes."""
    ck = load_checkpoint(checkpoint)
    manifest = Path(manifest)
    vocab_file = manifest.parent / "vocab.txt"
    vocab = read_vocab(vocab_file) if vocab_file.exists() else ck.vocab
    if vocab != ck.vocab:
        raise ValidationError(f"vocabulary mismatch: manifest has {len(vocab)} tokens, checkpoint {len(ck.vocab)}")
    utts = load_utterances(manifest, vocab)
    if isinstance(mix_spec, MixSpec):
        mix_spec = [mix_spec]
    model = FactorModel(ck.config, len(ck.vocab))
    return evaluate_utterances(model, ck.params, ck.stats, utts, ck.config, mix_spec, probes)
