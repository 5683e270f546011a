"""Artificial-noise mixing and a synthetic corpus with known content and context.

Synthetic utterances are sequences of tone-burst "tokens" (the content)
over a colored-noise-plus-hum background (the context). Each utterance is
generated from its own seed derived from ``(corpus_seed, index)``, so any
single utterance can be regenerated in isolation.
"""

from __future__ import annotations

import json
import math
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import ValidationError
from .features import Waveform


@dataclass(frozen=True)
class MixSpec:
    alpha: float = 0.0
    seed: int = 0
    domain: str = "waveform"  # or "feature"
    normalization: str = "rms"  # or "peak"

    def __post_init__(self):
        if not 0.0 <= self.alpha < 1.0:
            raise ValidationError(f"alpha must be in [0, 1), got {self.alpha}")
        if self.domain not in ("waveform", "feature"):
            raise ValidationError(f"unknown mix domain {self.domain!r}")
        if self.normalization not in ("rms", "peak"):
            raise ValidationError(f"unknown normalization {self.normalization!r}")


ALPHA_GRID = (0.0, 0.1, 0.25, 0.3)


def rms_normalize(w: Waveform) -> Waveform:
    rms = np.sqrt(np.mean(w.samples**2)) if len(w) else 0.0
    if rms == 0.0:
        raise ValidationError("cannot RMS-normalize a silent waveform")
    return Waveform(w.samples / rms, w.sample_rate_hz)


def peak_normalize(w: Waveform) -> Waveform:
    peak = np.max(np.abs(w.samples)) if len(w) else 0.0
    if peak == 0.0:
        raise ValidationError("cannot peak-normalize a silent waveform")
    return Waveform(w.samples / peak, w.sample_rate_hz)


def fit_length(x: np.ndarray, n: int) -> np.ndarray:
    """Clip to ``n`` rows, or zero-pad at the end."""
    if len(x) >= n:
        return x[:n]
    pad = np.zeros((n - len(x),) + x.shape[1:])
    return np.concatenate([x, pad], axis=0)


def mix_utterances(u_a: Waveform, u_b: Waveform, alpha: float) -> Waveform:
    """``(1 - alpha) * u_a + alpha * u_b`` sample by sample; ``u_b`` fitted to ``len(u_a)``.

    Inputs are expected to be magnitude-normalized already.
    """
    if len(u_a) == 0 or len(u_b) == 0:
        raise ValidationError("cannot mix empty waveforms")
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"alpha must be in [0, 1), got {alpha}")
    if u_a.sample_rate_hz != u_b.sample_rate_hz:
        raise ValidationError("sample rates differ")
    if alpha == 0.0:
        return Waveform(u_a.samples.copy(), u_a.sample_rate_hz)
    b = fit_length(u_b.samples, len(u_a))
    return Waveform((1.0 - alpha) * u_a.samples + alpha * b, u_a.sample_rate_hz)


def mix_features(f_a: np.ndarray, f_b: np.ndarray, alpha: float) -> np.ndarray:
    """Feature-domain variant of :func:`mix_utterances` on ``T x D`` matrices."""
    if len(f_a) == 0 or len(f_b) == 0:
        raise ValidationError("cannot mix empty feature matrices")
    if not 0.0 <= alpha < 1.0:
        raise ValidationError(f"alpha must be in [0, 1), got {alpha}")
    if alpha == 0.0:
        return np.array(f_a, dtype=np.float64)
    return (1.0 - alpha) * f_a + alpha * fit_length(f_b, len(f_a))


def mix_pairing(n: int, seed: int) -> np.ndarray:
    """Partner index for each utterance; no utterance is paired with itself when ``n > 1``."""
    if n < 1:
        raise ValidationError("need at least one utterance to pair")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    perm = np.random.default_rng(seed).permutation(n)
    # shifting along a random cycle order yields a derangement
    partner = np.empty(n, dtype=np.int64)
    partner[perm] = np.roll(perm, -1)
    return partner


# -- synthetic corpus ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    n_tokens: int = 5
    n_contexts: int = 3
    n_utterances: int = 500
    min_tokens: int = 2
    max_tokens: int = 4
    snr_db: tuple[float, float] = (0.0, 10.0)
    token_ms: float = 120.0
    gap_ms: float = 60.0
    sample_rate_hz: int = 16000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(x) for x in self.snr_db))
        if self.n_tokens < 2 or self.n_tokens > 26:
            raise ValidationError("n_tokens must be in [2, 26]")
        if self.n_contexts < 2:
            raise ValidationError("n_contexts must be >= 2")
        if self.n_utterances < 1:
            raise ValidationError("n_utterances must be >= 1")
        if not 1 <= self.min_tokens <= self.max_tokens:
            raise ValidationError("need 1 <= min_tokens <= max_tokens")
        lo, hi = self.snr_db
        if lo > hi or math.isnan(lo) or math.isnan(hi):
            raise ValidationError(f"bad SNR range {self.snr_db}")
        if self.token_ms <= 0 or self.gap_ms < 0:
            raise ValidationError("token_ms must be > 0 and gap_ms >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticCorpusSpec":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def vocab(self) -> list[str]:
        return ["<blank>"] + list(string.ascii_lowercase[: self.n_tokens])


@dataclass
class Utterance:
    id: str
    waveform: Waveform
    tokens: list[int]
    context_id: int | None = None
    snr_db: float | None = None
    vocab: list[str] = field(default_factory=list, repr=False)
    index: int | None = None
    audio_path: str | None = None

    @property
    def transcript(self) -> str:
        return " ".join(self.vocab[t] for t in self.tokens)


def token_frequency(token: int) -> float:
    """Fundamental (Hz) of content token ``token`` (1-based)."""
    return 400.0 * 1.5 ** (token - 1)


def token_template(token: int, spec: SyntheticCorpusSpec) -> np.ndarray:
    n = int(round(spec.sample_rate_hz * spec.token_ms / 1000.0))
    t = np.arange(n) / spec.sample_rate_hz
    f0 = token_frequency(token)
    tone = np.sin(2 * np.pi * f0 * t) + 0.5 * np.sin(2 * np.pi * 2 * f0 * t)
    return tone * np.hanning(n)


def context_noise(context: int, n: int, spec: SyntheticCorpusSpec, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS background: noise with spectral slope set by the context, plus a hum."""
    slope = 2.0 * context / (spec.n_contexts - 1)  # 0 = white ... 2 = brown
    white = rng.standard_normal(n)
    spec_f = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, 1.0 / spec.sample_rate_hz)
    shape = 1.0 / np.maximum(freqs, 50.0) ** (slope / 2.0)
    colored = np.fft.irfft(spec_f * shape, n=n)
    colored /= np.sqrt(np.mean(colored**2))
    hum_hz = 120.0 + 60.0 * context
    t = np.arange(n) / spec.sample_rate_hz
    hum = np.sqrt(2.0) * np.sin(2 * np.pi * hum_hz * t + rng.uniform(0, 2 * np.pi))
    bg = colored + 0.5 * hum
    return bg / np.sqrt(np.mean(bg**2))


def utterance_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def synthesize_utterance(spec: SyntheticCorpusSpec, index: int) -> Utterance:
    rng = utterance_rng(spec.seed, index)
    n_tok = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
    tokens = [int(x) for x in rng.integers(1, spec.n_tokens + 1, size=n_tok)]
    context = int(rng.integers(0, spec.n_contexts))
    lo, hi = spec.snr_db
    snr = float(rng.uniform(lo, hi)) if lo < hi else lo

    gap = np.zeros(int(round(spec.sample_rate_hz * spec.gap_ms / 1000.0)))
    pieces = [gap]
    for tok in tokens:
        pieces += [token_template(tok, spec), gap]
    clean = np.concatenate(pieces)
    noise = context_noise(context, len(clean), spec, rng)
    if math.isinf(snr) and snr > 0:
        wave = clean
    else:
        signal_rms = np.sqrt(np.mean(clean**2))
        wave = clean + noise * signal_rms * 10.0 ** (-snr / 20.0)
    # stored as float32 on disk; round here so in-memory and on-disk corpora agree
    wave = wave.astype(np.float32).astype(np.float64)
    return Utterance(f"utt{index:05d}", Waveform(wave, spec.sample_rate_hz), tokens, context, snr, spec.vocab, index)


def generate_synthetic_corpus(spec: SyntheticCorpusSpec) -> list[Utterance]:
    return [synthesize_utterance(spec, i) for i in range(spec.n_utterances)]


# -- on-disk formats -----------------------------------------------------------


def write_waveform(path: str | Path, w: Waveform) -> None:
    """16 kHz mono little-endian float32 raw samples plus ``<path>.json`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.asarray(w.samples, dtype="<f4").tobytes())
    meta = {"sample_rate_hz": w.sample_rate_hz, "num_samples": len(w), "dtype": "float32le", "channels": 1}
    path.with_name(path.name + ".json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def read_waveform(path: str | Path) -> Waveform:
    path = Path(path)
    meta_path = path.with_name(path.name + ".json")
    rate = json.loads(meta_path.read_text())["sample_rate_hz"] if meta_path.exists() else 16000
    samples = np.frombuffer(path.read_bytes(), dtype="<f4").astype(np.float64)
    return Waveform(samples, rate)


def write_vocab(path: str | Path, vocab: Sequence[str]) -> None:
    Path(path).write_text("\n".join(vocab) + "\n")


def read_vocab(path: str | Path) -> list[str]:
    return Path(path).read_text().splitlines()


def write_corpus(utterances: Sequence[Utterance], out_dir: str | Path, spec: SyntheticCorpusSpec | None = None) -> Path:
    """Write waveforms, ``manifest.jsonl`` and ``vocab.txt``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for u in utterances:
        rel = f"wav/{u.id}.f32"
        write_waveform(out / rel, u.waveform)
        rec = {"id": u.id, "audio": rel, "transcript": u.transcript, "context_id": u.context_id}
        lines.append(json.dumps(rec, sort_keys=True))
    manifest = out / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n")
    vocab = spec.vocab if spec is not None else (utterances[0].vocab if utterances else ["<blank>"])
    write_vocab(out / "vocab.txt", vocab)
    if spec is not None:
        (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


def read_manifest(path: str | Path) -> list[dict]:
    records = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{n}: invalid JSON ({exc.msg})") from None
        if "id" not in rec or "transcript" not in rec or not ("audio" in rec or "synthetic" in rec):
            raise ValidationError(f"{path}:{n}: record needs id, transcript and audio or synthetic")
        records.append(rec)
    return records


def load_utterances(manifest: str | Path, vocab: Sequence[str] | None = None) -> list[Utterance]:
    """Resolve a manifest into utterances (audio paths are relative to the manifest)."""
    manifest = Path(manifest)
    if vocab is None:
        vocab = read_vocab(manifest.parent / "vocab.txt")
    index = {tok: i for i, tok in enumerate(vocab)}
    out = []
    for rec in read_manifest(manifest):
        try:
            tokens = [index[t] for t in rec["transcript"].split()]
        except KeyError as exc:
            raise ValidationError(f"utterance {rec['id']}: token {exc.args[0]!r} not in vocabulary") from None
        idx, path = None, None
        if "audio" in rec:
            path = (manifest.parent / rec["audio"]).resolve()
            wave = read_waveform(path)
        else:
            syn = dict(rec["synthetic"])
            idx = syn.pop("index")
            wave = synthesize_utterance(SyntheticCorpusSpec.from_dict(syn), idx).waveform
        out.append(Utterance(rec["id"], wave, tokens, rec.get("context_id"), None, list(vocab), idx,
                             None if path is None else str(path)))
    return out
