"""Background-contrastive loss, CTC (the ASR loss used here) and the weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import NEG_INF, Graph, Node, ValidationError

BLANK = 0


@dataclass(frozen=True)
class ContrastiveConfig:
    M: int = 8
    include_positive_in_denominator: bool = True
    temperature: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ValidationError("M must be >= 1")
        if self.temperature <= 0:
            raise ValidationError("temperature must be > 0")


@dataclass(frozen=True)
class LossWeights:
    lambda_mi: float = 0.1
    lambda_contrast: float = 0.3

    def __post_init__(self):
        if self.lambda_mi < 0 or self.lambda_contrast < 0:
            raise ValidationError("loss weights must be nonnegative")


def sample_negatives(n: int, m: int, include_positive: bool, rng: np.random.Generator) -> np.ndarray:
    """``(n, m)`` utterance indices forming each anchor utterance's denominator.

    With ``include_positive`` row ``k`` starts with ``k`` itself followed by
    ``m - 1`` distinct other utterances, so the positive pair is always in
    the denominator. Otherwise ``m`` distinct utterances are drawn uniformly
    from the whole batch (``k`` may or may not appear).
    """
    if m > n:
        raise ValidationError(f"M={m} negatives requested from a batch of N={n}")
    rows = []
    for k in range(n):
        if include_positive:
            others = np.array([i for i in range(n) if i != k], dtype=np.int64)
            picked = rng.choice(others, size=m - 1, replace=False) if m > 1 else np.empty(0, np.int64)
            rows.append(np.concatenate([[k], picked]))
        else:
            rows.append(rng.choice(n, size=m, replace=False))
    return np.asarray(rows, dtype=np.int64).reshape(n, m)


def contrastive_loss(
    g: Graph,
    context: Node,
    lengths: Sequence[int],
    cfg: ContrastiveConfig = ContrastiveConfig(),
    negatives: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> Node:
    """Within-utterance context agreement against frames of sampled utterances.

    ``context`` is ``(N, T_max, F)`` with utterance ``k`` occupying its first
    ``lengths[k]`` rows. For anchor frame ``i`` and positive frame ``j`` of
    utterance ``k`` the denominator runs over the sampled utterances ``l``
    using frame ``min(j, |l| - 1)`` of each. The per-pair losses are
    averaged over the ``|k|^2`` pairs and then over the batch.
    """
    lengths = np.asarray(lengths, dtype=np.int64)
    n, t_max, _ = context.shape
    if lengths.shape != (n,):
        raise ValidationError(f"{lengths.shape[0]} lengths for a batch of {n}")
    if np.any(lengths < 1):
        raise ValidationError("empty utterance in contrastive batch")
    if np.any(lengths > t_max):
        raise ValidationError("utterance length exceeds padded length")
    if cfg.M > n:
        raise ValidationError(f"M={cfg.M} exceeds batch size N={n}")
    if negatives is None:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        negatives = sample_negatives(n, cfg.M, cfg.include_positive_in_denominator, rng)
    negatives = np.asarray(negatives, dtype=np.int64)
    m = negatives.shape[1]

    j = np.arange(t_max)
    utt_idx = np.broadcast_to(negatives[:, :, None], (n, m, t_max))
    frame_idx = np.minimum(j[None, None, :], lengths[negatives][:, :, None] - 1)
    neg = g.slice(context, (utt_idx, frame_idx))  # (N, M, T, F)
    anchor = g.reshape(context, (n, 1, t_max, context.shape[2]))
    inv_t = 1.0 / cfg.temperature
    sims = g.scale(g.matmul(anchor, g.transpose(neg, (0, 1, 3, 2))), inv_t)  # (N, M, Ti, Tj)
    log_denom = g.logsumexp(sims, axis=1)
    pos = g.scale(g.matmul(context, g.transpose(context, (0, 2, 1))), inv_t)
    per_pair = g.sub(log_denom, pos)

    valid = (j[None, :] < lengths[:, None]).astype(np.float64)
    weights = valid[:, :, None] * valid[:, None, :] / (lengths.astype(np.float64) ** 2)[:, None, None] / n
    return g.sum(g.mul(per_pair, g.constant(weights)))


def contrastive_loss_value(contexts: Sequence[np.ndarray], cfg: ContrastiveConfig = ContrastiveConfig(),
                           negatives: np.ndarray | None = None) -> float:
    """Convenience wrapper: list of ``(|k|, F)`` arrays -> scalar loss."""
    lengths = [len(c) for c in contexts]
    f = contexts[0].shape[1]
    padded = np.zeros((len(contexts), max(lengths), f))
    for k, c in enumerate(contexts):
        padded[k, : len(c)] = c
    g = Graph()
    return float(contrastive_loss(g, g.constant(padded), lengths, cfg, negatives).value[0])


def _shift(g: Graph, a: Node, k: int) -> Node:
    n, s = a.shape
    if k >= s:
        return g.constant(np.full((n, s), NEG_INF))
    return g.concat([g.constant(np.full((n, k), NEG_INF)), g.slice(a, (slice(None), slice(0, s - k)))], axis=1)


def extend_with_blanks(labels: Sequence[int], blank: int = BLANK) -> list[int]:
    ext = [blank]
    for tok in labels:
        ext += [int(tok), blank]
    return ext


def min_ctc_frames(labels: Sequence[int]) -> int:
    """Fewest frames that can emit ``labels``: one per token plus a blank between repeats."""
    labels = list(labels)
    return len(labels) + sum(1 for a, b in zip(labels, labels[1:]) if a == b)


def ctc_loss(
    g: Graph,
    logits: Node,
    labels: Sequence[Sequence[int]],
    lengths: Sequence[int] | None = None,
    blank: int = BLANK,
    reduction: str = "mean",
) -> Node:
    """Negative log-likelihood of ``labels`` under CTC, via the log-space forward recursion.

    ``logits`` is ``(N, T_max, V)``; frames at or beyond ``lengths[n]`` are
    ignored. ``reduction`` is ``"mean"``, ``"sum"`` or ``"none"``.
    """
    if logits.value.ndim != 3:
        raise ValidationError(f"logits must be (N, T, V), got {logits.shape}")
    n, t_max, vocab = logits.shape
    lengths = np.full(n, t_max, np.int64) if lengths is None else np.asarray(lengths, dtype=np.int64)
    if len(labels) != n or lengths.shape != (n,):
        raise ValidationError("labels/lengths do not match the batch")
    for b, (lab, t_b) in enumerate(zip(labels, lengths)):
        if t_b < 1 or t_b > t_max:
            raise ValidationError(f"utterance {b}: bad length {t_b}")
        if any(not 0 <= int(x) < vocab or int(x) == blank for x in lab):
            raise ValidationError(f"utterance {b}: label ids must be non-blank and < {vocab}")
        need = min_ctc_frames(lab)
        if t_b < need:
            raise ValidationError(f"utterance {b}: {t_b} frames cannot emit {len(lab)} labels (need {need})")

    exts = [extend_with_blanks(lab, blank) for lab in labels]
    s_len = np.array([len(e) for e in exts])
    s_max = int(s_len.max())
    ext = np.full((n, s_max), blank, np.int64)
    skip = np.full((n, s_max), NEG_INF)
    for b, e in enumerate(exts):
        ext[b, : len(e)] = e
        for s in range(2, len(e)):
            if e[s] != blank and e[s] != e[s - 2]:
                skip[b, s] = 0.0

    logp = g.log_softmax(logits, axis=-1)
    emit = g.slice(logp, (np.arange(n)[:, None, None], np.arange(t_max)[None, :, None], ext[:, None, :]))

    start = np.full((n, s_max), NEG_INF)
    start[:, :2] = 0.0
    alpha = g.add(g.slice(emit, (slice(None), 0)), g.constant(start))
    skip_c = g.constant(skip)
    for t in range(1, t_max):
        cands = g.stack([alpha, _shift(g, alpha, 1), g.add(_shift(g, alpha, 2), skip_c)], axis=0)
        new = g.add(g.logsumexp(cands, axis=0), g.slice(emit, (slice(None), t)))
        active = (t < lengths).astype(np.float64)[:, None]
        if active.all():
            alpha = new
        else:
            alpha = g.add(g.mul(new, g.constant(active)), g.mul(alpha, g.constant(1.0 - active)))

    rows = np.arange(n)
    last = g.slice(alpha, (rows, s_len - 1))
    prev = g.add(g.slice(alpha, (rows, np.maximum(s_len - 2, 0))), g.constant(np.where(s_len >= 2, 0.0, NEG_INF)))
    log_lik = g.logsumexp(g.stack([last, prev], axis=1), axis=1)
    nll = g.scale(log_lik, -1.0)
    if reduction == "none":
        return nll
    if reduction == "sum":
        return g.sum(nll)
    if reduction == "mean":
        return g.mean(nll)
    raise ValidationError(f"unknown reduction {reduction!r}")


def init_asr_head(rng: np.random.Generator, factor_dim: int, vocab_size: int) -> dict[str, np.ndarray]:
    return {
        "asr_head/W": rng.standard_normal((factor_dim, vocab_size)) / np.sqrt(factor_dim),
        "asr_head/b": np.zeros(vocab_size),
    }


def asr_logits(g: Graph, nodes: dict[str, Node], content: Node) -> Node:
    return g.add(g.matmul(content, nodes["asr_head/W"]), nodes["asr_head/b"])


def asr_loss(g: Graph, nodes: dict[str, Node], content: Node, labels, lengths=None) -> Node:
    """CTC over a per-frame linear projection of the content factors."""
    return ctc_loss(g, asr_logits(g, nodes, content), labels, lengths)


def total_loss(asr, mi, contrast, w: LossWeights = LossWeights()):
    """``asr + lambda_mi * mi + lambda_contrast * contrast`` for floats or tape nodes."""
    if isinstance(asr, Node):
        g = asr.graph
        return g.add(g.add(asr, g.scale(mi, w.lambda_mi)), g.scale(contrast, w.lambda_contrast))
    values = [float(asr), float(mi), float(contrast)]
    if not all(np.isfinite(values)):
        raise ValidationError("total_loss inputs must be finite")
    return values[0] + w.lambda_mi * values[1] + w.lambda_contrast * values[2]
