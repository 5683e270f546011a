"""Shared MLP building blocks on top of the tape."""

from __future__ import annotations

import numpy as np

from .autodiff import Graph, Node


def init_mlp(rng: np.random.Generator, prefix: str, sizes: list[int]) -> dict[str, np.ndarray]:
    """He-initialised weights for ``sizes[0] -> ... -> sizes[-1]``; zero biases."""
    params = {}
    last = len(sizes) - 2
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        std = np.sqrt((1.0 if i == last else 2.0) / n_in)
        params[f"{prefix}/{i}/W"] = rng.standard_normal((n_in, n_out)) * std
        params[f"{prefix}/{i}/b"] = np.zeros(n_out)
    return params


def mlp_depth(nodes: dict, prefix: str) -> int:
    depth = 0
    while f"{prefix}/{depth}/W" in nodes:
        depth += 1
    return depth


def mlp(
    g: Graph,
    nodes: dict[str, Node],
    prefix: str,
    x: Node,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Node:
    """ReLU on hidden layers, linear output; dropout after each hidden activation."""
    depth = mlp_depth(nodes, prefix)
    h = x
    for i in range(depth):
        h = g.add(g.matmul(h, nodes[f"{prefix}/{i}/W"]), nodes[f"{prefix}/{i}/b"])
        if i < depth - 1:
            h = g.dropout(g.relu(h), dropout, rng)
    return h


def mlp_numpy(params: dict[str, np.ndarray], prefix: str, x: np.ndarray) -> np.ndarray:
    """Plain-numpy forward pass of :func:`mlp` in evaluation mode."""
    depth = mlp_depth(params, prefix)
    h = x
    for i in range(depth):
        h = h @ params[f"{prefix}/{i}/W"] + params[f"{prefix}/{i}/b"]
        if i < depth - 1:
            h = np.maximum(h, 0.0)
    return h
