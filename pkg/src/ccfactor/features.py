"""Waveform -> normalized, stacked, augmented, frame-masked feature matrices.

Stage order is fixed: ``raw-lfbe -> stacked -> augmented -> masked``.
Every augmentation is a pure function of its inputs and an integer seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ValidationError

STAGES = ("raw-lfbe", "stacked", "augmented", "masked")


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate_hz <= 0:
            raise ValidationError("sample_rate_hz must be positive")

    def __len__(self) -> int:
        return len(self.samples)


@dataclass
class FrameSequence:
    frames: np.ndarray
    frame_shift_ms: float
    stage: str = "raw-lfbe"

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"unknown stage {self.stage!r}")
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2:
            raise ValidationError(f"frames must be T x D, got shape {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


@dataclass(frozen=True)
class LfbeConfig:
    sample_rate_hz: int = 16000
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 64
    fmin_hz: float = 20.0
    fmax_hz: float = 7600.0
    log_floor: float = 1e-10

    @property
    def window(self) -> int:
        return int(round(self.sample_rate_hz * self.window_ms / 1000.0))

    @property
    def hop(self) -> int:
        return int(round(self.sample_rate_hz * self.hop_ms / 1000.0))


@dataclass(frozen=True)
class SpecAugmentConfig:
    freq_masks: int = 2
    max_freq_ratio: float = 27.0 / 80.0
    max_time_masks: int = 20
    time_mask_multiplicity: float = 0.04
    max_time_ratio: float = 0.04

    def time_mask_count(self, num_frames: int) -> int:
        return min(self.max_time_masks, math.ceil(self.time_mask_multiplicity * num_frames))

    def max_time_width(self, num_frames: int) -> int:
        return int(math.floor(self.max_time_ratio * num_frames))

    def max_freq_width(self, dim: int) -> int:
        return int(math.floor(self.max_freq_ratio * dim))


@dataclass
class MaskPlan:
    frame_mask: np.ndarray
    spec_time_masks: list[tuple[int, int]] = field(default_factory=list)
    spec_freq_masks: list[tuple[int, int]] = field(default_factory=list)
    rng_seed: int = 0


def normalize_global(w: Waveform) -> Waveform:
    """Zero mean, unit standard deviation over the whole utterance."""
    x = w.samples
    if x.size == 0:
        raise ValidationError("empty waveform")
    centered = x - x.mean()
    std = np.sqrt(np.mean(centered * centered))
    if std == 0.0 or std < 1e-300:
        raise ValidationError("zero variance: cannot normalize a constant signal")
    out = centered / std
    # one correction pass pulls the mean/std residue down to rounding level
    out = out - out.mean()
    out = out / np.sqrt(np.mean(out * out))
    return Waveform(out, w.sample_rate_hz)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: LfbeConfig) -> np.ndarray:
    """``n_mels + 2`` frequencies (Hz): band b spans edges[b] .. edges[b + 2], peak at edges[b + 1]."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2))


def mel_filterbank(cfg: LfbeConfig) -> np.ndarray:
    """Triangular mel weights, shape ``(n_mels, n_fft // 2 + 1)``."""
    edges = mel_band_edges(cfg)
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate_hz / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def extract_lfbe(w: Waveform, cfg: LfbeConfig = LfbeConfig()) -> FrameSequence:
    """64-band log mel energies with a Hann window.

    ``log_floor`` is added to every power-spectrum bin before mel weighting,
    so silent input yields ``log(floor * sum(band weights))`` per band.
    """
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ValidationError(f"sample rate {w.sample_rate_hz} != configured {cfg.sample_rate_hz}")
    win, hop = cfg.window, cfg.hop
    if win > cfg.n_fft:
        raise ValidationError("window longer than FFT size")
    x = w.samples
    if len(x) < win:
        raise ValidationError(f"waveform of {len(x)} samples is shorter than one {win}-sample window")
    n_frames = (len(x) - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(win) / win)
    spectrum = np.fft.rfft(x[idx] * hann, n=cfg.n_fft, axis=1)
    power = spectrum.real**2 + spectrum.imag**2
    energies = (power + cfg.log_floor) @ mel_filterbank(cfg).T
    return FrameSequence(np.log(energies), cfg.hop_ms, "raw-lfbe")


def stack_frames(fs: FrameSequence, k: int = 3) -> FrameSequence:
    """Concatenate non-overlapping runs of ``k`` frames; trailing remainder dropped."""
    if fs.stage != "raw-lfbe":
        raise ValidationError(f"stack_frames expects raw-lfbe stage, got {fs.stage}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    t_out = fs.num_frames // k
    if t_out == 0:
        raise ValidationError(f"{fs.num_frames} frames cannot fill a stack of {k}")
    stacked = fs.frames[: t_out * k].reshape(t_out, k * fs.dim)
    return FrameSequence(stacked, fs.frame_shift_ms * k, "stacked")


def plan_spec_augment(num_frames: int, dim: int, cfg: SpecAugmentConfig, seed: int) -> MaskPlan:
    rng = np.random.default_rng(seed)
    freq = []
    fmax = cfg.max_freq_width(dim)
    for _ in range(cfg.freq_masks):
        width = int(rng.integers(0, fmax + 1))
        start = int(rng.integers(0, dim - width + 1))
        freq.append((start, width))
    time = []
    tmax = cfg.max_time_width(num_frames)
    for _ in range(cfg.time_mask_count(num_frames)):
        width = int(rng.integers(0, tmax + 1))
        start = int(rng.integers(0, num_frames - width + 1))
        time.append((start, width))
    return MaskPlan(np.zeros(num_frames, dtype=bool), time, freq, seed)


def spec_augment(fs: FrameSequence, cfg: SpecAugmentConfig = SpecAugmentConfig(), seed: int = 0):
    """Zero random frequency bands and time spans. Returns ``(FrameSequence, MaskPlan)``."""
    if fs.stage != "stacked":
        raise ValidationError(f"spec_augment expects stacked stage, got {fs.stage}")
    plan = plan_spec_augment(fs.num_frames, fs.dim, cfg, seed)
    out = fs.frames.copy()
    for start, width in plan.spec_freq_masks:
        out[:, start : start + width] = 0.0
    for start, width in plan.spec_time_masks:
        out[start : start + width, :] = 0.0
    return FrameSequence(out, fs.frame_shift_ms, "augmented"), plan


def plan_frame_mask(num_frames: int, pi_mask: float, seed: int) -> np.ndarray:
    if not 0.0 <= pi_mask < 1.0:
        raise ValidationError(f"pi_mask must be in [0, 1), got {pi_mask}")
    return np.random.default_rng(seed).random(num_frames) < pi_mask


def mask_frames(fs: FrameSequence, pi_mask: float = 0.15, seed: int = 0, embedding: np.ndarray | None = None):
    """Replace each frame, independently with probability ``pi_mask``, by ``embedding``.

    ``embedding`` is the current value of the learned mask vector (zeros if
    omitted). Inside a training graph the replacement is redone
    differentiably from the returned plan; see :func:`ccfactor.model.apply_frame_mask`.
    """
    if fs.stage not in ("stacked", "augmented"):
        raise ValidationError(f"mask_frames expects stacked or augmented stage, got {fs.stage}")
    mask = plan_frame_mask(fs.num_frames, pi_mask, seed)
    emb = np.zeros(fs.dim) if embedding is None else np.asarray(embedding, dtype=np.float64)
    if emb.shape != (fs.dim,):
        raise ValidationError(f"mask embedding has shape {emb.shape}, expected ({fs.dim},)")
    out = fs.frames.copy()
    out[mask] = emb
    return FrameSequence(out, fs.frame_shift_ms, "masked"), MaskPlan(mask, rng_seed=seed)
