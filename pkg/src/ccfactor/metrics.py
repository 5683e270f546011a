"""Error rates, relative improvements, greedy CTC decoding and linear probes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import ValidationError

SUB, DEL, INS, MATCH = "S", "D", "I", "="


@dataclass(frozen=True)
class EditBreakdown:
    substitutions: int
    insertions: int
    deletions: int
    reference_length: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_length

    def __add__(self, other: "EditBreakdown") -> "EditBreakdown":
        return EditBreakdown(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.reference_length + other.reference_length,
        )


def edit_ops(reference: Sequence, hypothesis: Sequence, return_script: bool = False):
    """Unit-cost Levenshtein alignment of ``hypothesis`` against ``reference``.

    When several minimal scripts exist the backtrace prefers, at each cell,
    match/substitution, then deletion, then insertion.
    """
    ref, hyp = list(reference), list(hypothesis)
    if not ref:
        raise ValidationError("empty reference: error rate undefined")
    n, m = len(ref), len(hyp)
    cost = np.zeros((n + 1, m + 1), dtype=np.int64)
    cost[:, 0] = np.arange(n + 1)
    cost[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost[i, j] = min(
                cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]),
                cost[i - 1, j] + 1,
                cost[i, j - 1] + 1,
            )
    script = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i, j] == cost[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            script.append(MATCH if ref[i - 1] == hyp[j - 1] else SUB)
            i, j = i - 1, j - 1
        elif i > 0 and cost[i, j] == cost[i - 1, j] + 1:
            script.append(DEL)
            i -= 1
        else:
            script.append(INS)
            j -= 1
    script.reverse()
    out = EditBreakdown(script.count(SUB), script.count(INS), script.count(DEL), n)
    return (out, script) if return_script else out


def word_error_rate(reference: Sequence, hypothesis: Sequence) -> float:
    return edit_ops(reference, hypothesis).wer


def relative_improvement(baseline: float, ours: float) -> float:
    """Percent change of ``ours`` relative to ``baseline`` (negative = fewer errors)."""
    if not baseline > 0:
        raise ValidationError(f"baseline must be positive, got {baseline}")
    return 100.0 * (ours - baseline) / baseline


def greedy_ctc_decode(logits: np.ndarray, blank: int = 0) -> list[int]:
    """Per-frame argmax, collapse repeats, drop blanks."""
    logits = np.asarray(logits)
    if logits.size == 0:
        return []
    best = np.argmax(logits, axis=-1)
    out = []
    prev = None
    for tok in best:
        tok = int(tok)
        if tok != prev and tok != blank:
            out.append(tok)
        prev = tok
    return out


# -- probes --------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeResult:
    target: str
    source: str
    accuracy: float
    chance: float
    n_train: int
    n_test: int


def linear_probe(
    features: np.ndarray,
    labels: Sequence[int],
    seed: int = 0,
    test_fraction: float = 0.3,
    max_iter: int = 500,
    target: str = "context_id",
    source: str = "features",
) -> ProbeResult:
    """Held-out accuracy of a multinomial logistic regression on frozen features.

    Features are standardized with train-split statistics. The split is
    stratified and seeded; the optimizer budget is fixed by ``max_iter``.
    """
    import warnings

    from sklearn.exceptions import ConvergenceWarning
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import train_test_split

    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if x.ndim != 2 or len(x) != len(y):
        raise ValidationError(f"features {x.shape} do not match {len(y)} labels")
    classes, counts = np.unique(y, return_counts=True)
    if len(classes) < 2:
        raise ValidationError("probe targets have a single class")
    if counts.min() < 2:
        raise ValidationError(f"class {classes[np.argmin(counts)]} has a single example; cannot split")
    x_tr, x_te, y_tr, y_te = train_test_split(x, y, test_size=test_fraction, random_state=seed, stratify=y)
    mu = x_tr.mean(axis=0)
    sd = x_tr.std(axis=0)
    sd[sd < 1e-12] = 1.0
    clf = LogisticRegression(max_iter=max_iter, tol=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit((x_tr - mu) / sd, y_tr)
    acc = float(np.mean(clf.predict((x_te - mu) / sd) == y_te))
    chance = 1.0 / len(classes)
    return ProbeResult(target, source, acc, chance, len(y_tr), len(y_te))


def probe_disentanglement(
    context_features: np.ndarray,
    content_features: np.ndarray,
    context_ids: Sequence[int],
    seed: int = 0,
    max_iter: int = 500,
) -> tuple[ProbeResult, ProbeResult]:
    """Probe context_id from each factor; returns ``(from_context, from_content)``."""
    a = linear_probe(context_features, context_ids, seed, max_iter=max_iter, source="z_context")
    b = linear_probe(content_features, context_ids, seed, max_iter=max_iter, source="z_content")
    return a, b


# -- reports -------------------------------------------------------------------


@dataclass
class MetricsReport:
    rows: list[dict] = field(default_factory=list)
    probes: list[ProbeResult] = field(default_factory=list)
    losses: dict[str, float] = field(default_factory=dict)
    relative: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "probes": [asdict(p) for p in self.probes],
            "losses": self.losses,
            "relative": self.relative,
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            rows=list(d.get("rows", [])),
            probes=[ProbeResult(**p) for p in d.get("probes", [])],
            losses=dict(d.get("losses", {})),
            relative=dict(d.get("relative", {})),
        )
