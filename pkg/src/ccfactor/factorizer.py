"""Content/context projections and the cyclic-reconstruction MI loss.

Two projection MLPs split each encoder frame into a content factor and a
context factor. Three reconstruction MLPs then try to predict

* the content factor from the gradient-reversed context factor,
* the context factor from the gradient-reversed content factor,
* the clean input frame from both factors (no reversal).

The reversals make each projection work against its cross-predictor while
the predictor itself trains normally, pushing the factors apart. Projections
end in a tanh by default: with unbounded outputs a projection can win the
reversed game simply by growing its scale, which destabilizes training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node, ValidationError
from .nn import init_mlp, mlp, mlp_numpy

PREFIX = "factorizer"
NETWORKS = ("pi_content", "pi_context", "phi_content", "phi_context", "phi_joint")


@dataclass(frozen=True)
class FactorizerConfig:
    F: int = 32
    hidden: int = 64
    hidden_layers: int = 3
    frame_dim: int = 192
    # squashing applied to both projection outputs: "linear" or "tanh"
    output_activation: str = "tanh"

    def __post_init__(self):
        if min(self.F, self.hidden, self.frame_dim) < 1 or self.hidden_layers < 0:
            raise ValidationError("factorizer dimensions must be positive")
        if self.output_activation not in ("linear", "tanh"):
            raise ValidationError(f"unknown output_activation {self.output_activation!r}")


FULL_SCALE_FACTORIZER = FactorizerConfig(F=512, hidden=512, hidden_layers=3)


@dataclass
class FactorPair:
    z_content: Node
    z_context: Node


@dataclass
class MiTerms:
    content: Node
    context: Node
    joint: Node
    total: Node


def init_factorizer(rng: np.random.Generator, embed_dim: int, cfg: FactorizerConfig = FactorizerConfig()) -> dict[str, np.ndarray]:
    hid = [cfg.hidden] * cfg.hidden_layers
    shapes = {
        "pi_content": [embed_dim, *hid, cfg.F],
        "pi_context": [embed_dim, *hid, cfg.F],
        "phi_content": [cfg.F, *hid, cfg.F],
        "phi_context": [cfg.F, *hid, cfg.F],
        "phi_joint": [2 * cfg.F, *hid, cfg.frame_dim],
    }
    params = {}
    for net in NETWORKS:
        params.update(init_mlp(rng, f"{PREFIX}/{net}", shapes[net]))
    return params


def project(g: Graph, nodes: dict[str, Node], embeddings: Node, activation: str = "tanh") -> FactorPair:
    w = nodes[f"{PREFIX}/pi_content/0/W"]
    if embeddings.shape[-1] != w.shape[0]:
        raise ValidationError(f"embedding dim {embeddings.shape[-1]} != factorizer input dim {w.shape[0]}")
    zc = mlp(g, nodes, f"{PREFIX}/pi_content", embeddings)
    zx = mlp(g, nodes, f"{PREFIX}/pi_context", embeddings)
    if activation == "tanh":
        zc, zx = g.tanh(zc), g.tanh(zx)
    return FactorPair(zc, zx)


def project_numpy(
    params: dict[str, np.ndarray], embeddings: np.ndarray, activation: str = "tanh"
) -> tuple[np.ndarray, np.ndarray]:
    zc = mlp_numpy(params, f"{PREFIX}/pi_content", embeddings)
    zx = mlp_numpy(params, f"{PREFIX}/pi_context", embeddings)
    if activation == "tanh":
        return np.tanh(zc), np.tanh(zx)
    return zc, zx


def frame_mean(g: Graph, per_frame: Node, valid: np.ndarray | None) -> Node:
    """Mean of a per-frame quantity over the frames flagged in ``valid``."""
    if valid is None:
        return g.mean(per_frame)
    valid = np.asarray(valid, dtype=np.float64)
    count = valid.sum()
    if count <= 0:
        raise ValidationError("no valid frames")
    return g.scale(g.sum(g.mul(per_frame, g.constant(valid))), 1.0 / count)


def squared_distance(g: Graph, a: Node, b: Node) -> Node:
    d = g.sub(a, b)
    return g.sum(g.mul(d, d), axis=-1)


def mi_loss(
    g: Graph,
    nodes: dict[str, Node],
    embeddings: Node,
    frames: Node,
    valid: np.ndarray | None = None,
    factors: FactorPair | None = None,
    detach_targets: bool = False,
    activation: str = "tanh",
) -> MiTerms:
    """Cyclic-reconstruction loss and its three subterms.

    ``frames`` are the clean (pre-masking) stacked frames the joint head
    reconstructs; ``valid`` flags real (non-padding) frames. Each subterm is
    the squared L2 distance summed over feature dims and averaged over
    valid frames. ``activation`` squashes the projections when ``factors``
    is not supplied; ``detach_targets`` blocks gradient into the factor
    being predicted so only the reversed input path shapes the projections.
    """
    if embeddings.shape[:-1] != frames.shape[:-1]:
        raise ValidationError(f"embeddings {embeddings.shape} and frames {frames.shape} disagree on length")
    if factors is None:
        factors = project(g, nodes, embeddings, activation)
    zc, zx = factors.z_content, factors.z_context
    pred_content = mlp(g, nodes, f"{PREFIX}/phi_content", g.grad_reverse(zx))
    pred_context = mlp(g, nodes, f"{PREFIX}/phi_context", g.grad_reverse(zc))
    recon = mlp(g, nodes, f"{PREFIX}/phi_joint", g.concat([zc, zx], axis=-1))
    if recon.shape != frames.shape:
        raise ValidationError(f"joint reconstruction {recon.shape} does not match frames {frames.shape}")
    tc, tx = (g.stop_gradient(zc), g.stop_gradient(zx)) if detach_targets else (zc, zx)
    content = frame_mean(g, squared_distance(g, tc, pred_content), valid)
    context = frame_mean(g, squared_distance(g, tx, pred_context), valid)
    joint = frame_mean(g, squared_distance(g, frames, recon), valid)
    return MiTerms(content, context, joint, g.add(g.add(content, context), joint))
