"""Frame-centric speech encoders behind one interface.

An encoder maps a batch of feature frames ``(N, T, D)`` to embeddings
``(N, T, E)`` without subsampling. Two desk-scale references are provided:
a gated recurrent stack (unidirectional) and a windowed per-frame MLP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node, ValidationError
from .nn import init_mlp, mlp

PREFIX = "encoder"


@dataclass(frozen=True)
class RecurrentEncoderConfig:
    layers: int = 2
    hidden: int = 64
    E: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.layers < 1 or self.hidden < 1 or self.E < 1:
            raise ValidationError("recurrent encoder needs layers, hidden, E >= 1")


@dataclass(frozen=True)
class WindowMlpEncoderConfig:
    radius: int = 2
    hidden: int = 64
    layers: int = 2
    E: int = 64
    dropout: float = 0.1

    def __post_init__(self):
        if self.radius < 0:
            raise ValidationError("window radius must be >= 0")
        if self.layers < 1 or self.hidden < 1 or self.E < 1:
            raise ValidationError("window MLP encoder needs layers, hidden, E >= 1")


class Encoder:
    """Common surface: ``init_params``, graph application, numpy ``encode``."""

    E: int

    def init_params(self, rng: np.random.Generator, input_dim: int) -> dict[str, np.ndarray]:
        raise NotImplementedError

    def apply(self, g: Graph, nodes: dict[str, Node], x: Node, rng: np.random.Generator | None = None) -> Node:
        raise NotImplementedError

    def encode(self, params: dict[str, np.ndarray], frames: np.ndarray) -> np.ndarray:
        """Evaluation-mode embeddings for ``(T, D)`` or ``(N, T, D)`` frames."""
        frames = np.asarray(frames, dtype=np.float64)
        single = frames.ndim == 2
        if single:
            frames = frames[None]
        if frames.shape[1] == 0:
            raise ValidationError("cannot encode an empty frame sequence")
        g = Graph()
        out = self.apply(g, g.bind(params, PREFIX), g.constant(frames), None).value
        return out[0] if single else out


class RecurrentEncoder(Encoder):
    def __init__(self, cfg: RecurrentEncoderConfig = RecurrentEncoderConfig()):
        self.cfg = cfg
        self.E = cfg.E

    def init_params(self, rng, input_dim):
        h = self.cfg.hidden
        params = {}
        n_in = input_dim
        for layer in range(self.cfg.layers):
            p = f"{PREFIX}/gru{layer}"
            for gate in ("z", "r", "n"):
                params[f"{p}/W{gate}"] = rng.standard_normal((n_in, h)) / np.sqrt(n_in)
                params[f"{p}/U{gate}"] = rng.standard_normal((h, h)) / np.sqrt(h)
                params[f"{p}/b{gate}"] = np.zeros(h)
            n_in = h
        params.update(init_mlp(rng, f"{PREFIX}/out", [h, self.cfg.E]))
        return params

    def apply(self, g, nodes, x, rng=None):
        if x.shape[1] == 0:
            raise ValidationError("cannot encode an empty frame sequence")
        n, t_len = x.shape[0], x.shape[1]
        h_dim = self.cfg.hidden
        seq = x
        for layer in range(self.cfg.layers):
            p = f"{PREFIX}/gru{layer}"
            proj = {gate: g.add(g.matmul(seq, nodes[f"{p}/W{gate}"]), nodes[f"{p}/b{gate}"]) for gate in "zrn"}
            h = g.constant(np.zeros((n, h_dim)))
            outputs = []
            for t in range(t_len):
                z = g.logistic(g.add(g.slice(proj["z"], (slice(None), t)), g.matmul(h, nodes[f"{p}/Uz"])))
                r = g.logistic(g.add(g.slice(proj["r"], (slice(None), t)), g.matmul(h, nodes[f"{p}/Ur"])))
                cand = g.tanh(g.add(g.slice(proj["n"], (slice(None), t)), g.mul(r, g.matmul(h, nodes[f"{p}/Un"]))))
                # h <- (1 - z) * cand + z * h
                h = g.add(cand, g.mul(z, g.sub(h, cand)))
                outputs.append(h)
            seq = g.dropout(g.stack(outputs, axis=1), self.cfg.dropout, rng)
        return mlp(g, nodes, f"{PREFIX}/out", seq)


class WindowMlpEncoder(Encoder):
    def __init__(self, cfg: WindowMlpEncoderConfig = WindowMlpEncoderConfig()):
        self.cfg = cfg
        self.E = cfg.E

    def init_params(self, rng, input_dim):
        width = (2 * self.cfg.radius + 1) * input_dim
        sizes = [width] + [self.cfg.hidden] * self.cfg.layers + [self.cfg.E]
        return init_mlp(rng, f"{PREFIX}/mlp", sizes)

    def apply(self, g, nodes, x, rng=None):
        if x.shape[1] == 0:
            raise ValidationError("cannot encode an empty frame sequence")
        r = self.cfg.radius
        if r:
            n, t_len, d = x.shape
            pad = g.constant(np.zeros((n, r, d)))
            padded = g.concat([pad, x, pad], axis=1)
            x = g.concat([g.slice(padded, (slice(None), slice(i, i + t_len))) for i in range(2 * r + 1)], axis=-1)
        return mlp(g, nodes, f"{PREFIX}/mlp", x, self.cfg.dropout, rng)


def build_encoder(kind: str, **kwargs) -> Encoder:
    if kind == "recurrent":
        return RecurrentEncoder(RecurrentEncoderConfig(**kwargs))
    if kind == "window_mlp":
        return WindowMlpEncoder(WindowMlpEncoderConfig(**kwargs))
    raise ValidationError(f"unknown encoder kind {kind!r}")
