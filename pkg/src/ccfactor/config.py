"""Run configuration: one JSON-serializable tree of dataclasses."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .autodiff import ValidationError
from .features import LfbeConfig, SpecAugmentConfig
from .factorizer import FactorizerConfig
from .objectives import ContrastiveConfig, LossWeights


@dataclass(frozen=True)
class EncoderSettings:
    kind: str = "window_mlp"  # or "recurrent"
    hidden: int = 64
    layers: int = 2
    E: int = 64
    radius: int = 2
    dropout: float = 0.1

    def __post_init__(self):
        if self.kind not in ("window_mlp", "recurrent"):
            raise ValidationError(f"unknown encoder kind {self.kind!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")

    def build(self):
        from .encoders import build_encoder

        kw = dict(hidden=self.hidden, layers=self.layers, E=self.E, dropout=self.dropout)
        if self.kind == "window_mlp":
            kw["radius"] = self.radius
        return build_encoder(self.kind, **kw)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # "constant" or "warmup_hold"; the latter ramps linearly for warmup_steps
    schedule: str = "constant"
    warmup_steps: int = 0

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or self.eps <= 0:
            raise ValidationError("invalid Adam hyperparameters")
        if self.schedule not in ("constant", "warmup_hold"):
            raise ValidationError(f"unknown schedule {self.schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.schedule == "warmup_hold" and self.warmup_steps > 0:
            return self.lr * min(1.0, step / self.warmup_steps)
        return self.lr


@dataclass(frozen=True)
class RunConfig:
    corpus: dict | None = None  # SyntheticCorpusSpec fields
    manifest: str | None = None
    eval_fraction: float = 0.2
    encoder: EncoderSettings = field(default_factory=EncoderSettings)
    factorizer: FactorizerConfig = field(default_factory=FactorizerConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    pi_mask: float = 0.15
    specaugment: SpecAugmentConfig = field(default_factory=SpecAugmentConfig)
    specaugment_enabled: bool = True
    lfbe: LfbeConfig = field(default_factory=LfbeConfig)
    stack: int = 3
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    out_dir: str = "runs/default"
    grl: bool = True
    contrast_stop_gradient: bool = False
    detach_mi_targets: bool = False
    divergence_threshold: float = 1e6
    probe_max_iter: int = 500

    def __post_init__(self):
        if (self.corpus is None) == (self.manifest is None):
            raise ValidationError("exactly one of corpus (synthetic spec) or manifest must be set")
        if self.corpus is not None:
            # JSON-normal form, so a config equals its own round trip
            object.__setattr__(self, "corpus", json.loads(json.dumps(self.corpus)))
        if not 0.0 <= self.pi_mask < 1.0:
            raise ValidationError("pi_mask must be in [0, 1)")
        if not 0.0 <= self.eval_fraction < 1.0:
            raise ValidationError("eval_fraction must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")
        if self.contrastive.M > self.batch_size:
            raise ValidationError(f"contrastive M={self.contrastive.M} exceeds batch size {self.batch_size}")
        if self.factorizer.frame_dim != self.lfbe.n_mels * self.stack:
            raise ValidationError(
                f"factorizer frame_dim {self.factorizer.frame_dim} != n_mels*stack = {self.lfbe.n_mels * self.stack}"
            )

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def config_hash(self) -> str:
        """Digest of every science parameter (output location excluded)."""
        d = self.to_dict()
        d.pop("out_dir")
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)


def _build(cls, data):
    if not isinstance(data, dict):
        raise ValidationError(f"{cls.__name__} expects an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if callable(known[name].default_factory) else known[name].default
        if is_dataclass(default) and isinstance(value, dict):
            value = _build(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ValidationError(f"{cls.__name__}: {exc}") from None


def full_scale_preset(**overrides) -> RunConfig:
    """Full-scale hyperparameters: 512-wide factors, six-layer recurrent encoder (not trainable at desk scale)."""
    base = dict(
        factorizer=FactorizerConfig(F=512, hidden=512, hidden_layers=3),
        encoder=EncoderSettings(kind="recurrent", hidden=1024, layers=6, E=1024, dropout=0.1),
        optimizer=OptimizerConfig(lr=3e-4),
        batch_size=2048,
        epochs=65,
        corpus=None,
        manifest="librispeech/manifest.jsonl",
    )
    base.update(overrides)
    return RunConfig(**base)
