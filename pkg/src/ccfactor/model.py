"""Full model: frame masking -> encoder -> factorizer -> CTC head, plus all losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node, ValidationError
from .config import RunConfig
from .factorizer import PREFIX as FACTOR_PREFIX
from .factorizer import init_factorizer, mi_loss, project
from .features import (
    FrameSequence,
    extract_lfbe,
    normalize_global,
    plan_frame_mask,
    spec_augment,
    stack_frames,
)
from .objectives import asr_logits, contrastive_loss, ctc_loss, init_asr_head, total_loss

MASK_EMBEDDING = "mask_embedding"
LOSS_NAMES = ("L_asr", "L_m_content", "L_m_context", "L_m_joint", "L_mi", "L_contrast", "L_total")


@dataclass
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, matrices: list[np.ndarray]) -> "FeatureStats":
        allf = np.concatenate(matrices, axis=0)
        std = allf.std(axis=0)
        return cls(allf.mean(axis=0), np.where(std < 1e-8, 1.0, std))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


def stacked_features(waveform, cfg: RunConfig) -> np.ndarray:
    """Waveform -> globally normalized -> LFBE -> stacked ``(T', n_mels * stack)``."""
    fs = extract_lfbe(normalize_global(waveform), cfg.lfbe)
    return stack_frames(fs, cfg.stack).frames


@dataclass
class Batch:
    inputs: np.ndarray  # (N, T, D) after SpecAugment, before frame masking
    targets: np.ndarray  # (N, T, D) clean stacked frames
    frame_mask: np.ndarray  # (N, T) bool
    lengths: np.ndarray
    labels: list[list[int]]
    context_ids: list[int | None]
    ids: list[str]

    @property
    def valid(self) -> np.ndarray:
        t = self.inputs.shape[1]
        return np.arange(t)[None, :] < self.lengths[:, None]


def pad_stack(mats: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(m) for m in mats], dtype=np.int64)
    out = np.zeros((len(mats), int(lengths.max()), mats[0].shape[1]))
    for i, m in enumerate(mats):
        out[i, : len(m)] = m
    return out, lengths


def make_batch(
    feats: list[np.ndarray],
    labels: list[list[int]],
    context_ids: list,
    ids: list[str],
    cfg: RunConfig,
    seeds: list[int] | None,
) -> Batch:
    """Apply SpecAugment and draw frame-mask plans (``seeds=None`` means evaluation: neither)."""
    augmented, masks = [], []
    for i, f in enumerate(feats):
        if seeds is None:
            augmented.append(f)
            masks.append(np.zeros(len(f), dtype=bool))
            continue
        ss = np.random.SeedSequence([seeds[i]]).generate_state(2)
        if cfg.specaugment_enabled:
            aug, _ = spec_augment(FrameSequence(f, cfg.lfbe.hop_ms * cfg.stack, "stacked"), cfg.specaugment, int(ss[0]))
            augmented.append(aug.frames)
        else:
            augmented.append(f)
        masks.append(plan_frame_mask(len(f), cfg.pi_mask, int(ss[1])))
    inputs, lengths = pad_stack(augmented)
    targets, _ = pad_stack(feats)
    mask = np.zeros(inputs.shape[:2], dtype=bool)
    for i, m in enumerate(masks):
        mask[i, : len(m)] = m
    return Batch(inputs, targets, mask, lengths, labels, list(context_ids), list(ids))


def apply_frame_mask(g: Graph, x: Node, mask: np.ndarray, embedding: Node) -> Node:
    """Differentiable replacement of masked frames by the learned embedding."""
    m = mask.astype(np.float64)[..., None]
    return g.add(g.mul(x, g.constant(1.0 - m)), g.mul(g.constant(m), embedding))


class FactorModel:
    def __init__(self, cfg: RunConfig, vocab_size: int):
        if vocab_size < 2:
            raise ValidationError("vocabulary needs a blank and at least one token")
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.encoder = cfg.encoder.build()
        self.frame_dim = cfg.lfbe.n_mels * cfg.stack

    def init_params(self, seed: int | None = None) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(np.random.SeedSequence([self.cfg.seed if seed is None else seed, 0]))
        params = {}
        params.update(self.encoder.init_params(rng, self.frame_dim))
        params.update(init_factorizer(rng, self.encoder.E, self.cfg.factorizer))
        params.update(init_asr_head(rng, self.cfg.factorizer.F, self.vocab_size))
        params[MASK_EMBEDDING] = np.zeros(self.frame_dim)
        return params

    def losses(self, g: Graph, nodes: dict[str, Node], batch: Batch, rng: np.random.Generator | None) -> dict[str, Node]:
        """Every loss term for one batch. ``rng`` drives dropout and negative sampling."""
        cfg = self.cfg
        x = apply_frame_mask(g, g.constant(batch.inputs), batch.frame_mask, nodes[MASK_EMBEDDING])
        e = self.encoder.apply(g, nodes, x, rng)
        factors = project(g, nodes, e, cfg.factorizer.output_activation)
        valid = batch.valid
        mi = mi_loss(g, nodes, e, g.constant(batch.targets), valid, factors, cfg.detach_mi_targets)
        asr = ctc_loss(g, asr_logits(g, nodes, factors.z_content), batch.labels, batch.lengths)
        ctx = factors.z_context
        if cfg.contrast_stop_gradient:
            ctx = project(g, nodes, g.stop_gradient(e), cfg.factorizer.output_activation).z_context
        neg_rng = rng if rng is not None else np.random.default_rng(cfg.contrastive.seed)
        contrast = contrastive_loss(g, ctx, batch.lengths, cfg.contrastive, rng=neg_rng)
        total = total_loss(asr, mi.total, contrast, cfg.weights)
        return {
            "L_asr": asr,
            "L_m_content": mi.content,
            "L_m_context": mi.context,
            "L_m_joint": mi.joint,
            "L_mi": mi.total,
            "L_contrast": contrast,
            "L_total": total,
        }

    def forward_eval(self, params: dict[str, np.ndarray], feats: list[np.ndarray], chunk: int = 64):
        """Evaluation-mode pass; per utterance ``(embeddings, z_content, z_context, logits)``."""
        out = []
        for start in range(0, len(feats), chunk):
            part = feats[start : start + chunk]
            x, lengths = pad_stack(part)
            g = Graph()
            nodes = g.bind(params)
            e = self.encoder.apply(g, nodes, g.constant(x), None)
            fp = project(g, nodes, e, self.cfg.factorizer.output_activation)
            logits = asr_logits(g, nodes, fp.z_content)
            for i, n in enumerate(lengths):
                out.append((e.value[i, :n], fp.z_content.value[i, :n], fp.z_context.value[i, :n], logits.value[i, :n]))
        return out

    @staticmethod
    def factor_param_names(params: dict[str, np.ndarray], network: str) -> list[str]:
        return [k for k in params if k.startswith(f"{FACTOR_PREFIX}/{network}/")]
