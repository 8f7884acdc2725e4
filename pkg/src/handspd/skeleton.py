"""Hand-skeleton graph, the coordinate convolution layer, and the
per-finger partition of its output.

Joint numbering is 1-based: wrist = 1, palm = 2, then one chain of
consecutive indices per finger, base to tip (thumb {3..6}, index {7..10},
middle {11..14}, ring {15..18}, pinky {19..22} for the default hand).
The palm connects to the wrist and to every finger base; consecutive
indices within a finger are connected; every node neighbors itself.

The convolution at node i sums over graph neighbors j with |j - i| <= 1,
using one 3-vector filter per (label, channel) where the label is
1 for j == i, 2 for j == i + 1 and 3 for j == i - 1.  Output features are
produced for the finger joints only (nodes 3..n_joints); node 3 is the
single node whose label-3 neighbor is the palm.

A reduced hand (fewer fingers / shorter chains, same topology) is supported
for desk-scale tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInput

N_LABELS = 3


@dataclass(frozen=True)
class HandGraph:
    n_fingers: int = 5
    joints_per_finger: int = 4
    # Derived, filled in __post_init__.
    n_joints: int = field(init=False)
    neighbors: tuple = field(init=False)          # 1-based adjacency incl. self
    finger_joints: tuple = field(init=False)      # 1-based joint ids per finger
    out_nodes: tuple = field(init=False)          # 1-based nodes with output features
    _self_idx: np.ndarray = field(init=False, repr=False)
    _succ_idx: np.ndarray = field(init=False, repr=False)
    _succ_mask: np.ndarray = field(init=False, repr=False)
    _pred_idx: np.ndarray = field(init=False, repr=False)
    _pred_mask: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n_fingers < 1 or self.joints_per_finger < 2:
            raise InvalidInput("need at least one finger with two joints")
        n = 2 + self.n_fingers * self.joints_per_finger
        fingers = []
        edges = {i: {i} for i in range(1, n + 1)}

        def connect(a, b):
            edges[a].add(b)
            edges[b].add(a)

        connect(1, 2)
        for f in range(self.n_fingers):
            base = 3 + f * self.joints_per_finger
            chain = list(range(base, base + self.joints_per_finger))
            fingers.append(tuple(chain))
            connect(2, base)
            for a, b in zip(chain, chain[1:]):
                connect(a, b)

        out_nodes = tuple(range(3, n + 1))
        self_idx = np.array([i - 1 for i in out_nodes])
        succ = np.array([i + 1 if i + 1 in edges[i] else i for i in out_nodes])
        succ_mask = np.array([i + 1 in edges[i] for i in out_nodes], dtype=np.float64)
        pred = np.array([i - 1 if i - 1 in edges[i] else i for i in out_nodes])
        pred_mask = np.array([i - 1 in edges[i] for i in out_nodes], dtype=np.float64)

        object.__setattr__(self, "n_joints", n)
        object.__setattr__(self, "neighbors", tuple(frozenset(edges[i]) for i in range(1, n + 1)))
        object.__setattr__(self, "finger_joints", tuple(fingers))
        object.__setattr__(self, "out_nodes", out_nodes)
        object.__setattr__(self, "_self_idx", self_idx)
        object.__setattr__(self, "_succ_idx", succ - 1)
        object.__setattr__(self, "_succ_mask", succ_mask[:, None])
        object.__setattr__(self, "_pred_idx", pred - 1)
        object.__setattr__(self, "_pred_mask", pred_mask[:, None])

    @property
    def n_out_nodes(self) -> int:
        return len(self.out_nodes)

    def neighbor_labels(self, i: int):
        """Convolution neighbors of 1-based node i as (joint, label) pairs."""
        pairs = []
        for j in sorted(self.neighbors[i - 1]):
            if j == i:
                pairs.append((j, 1))
            elif j - i == 1:
                pairs.append((j, 2))
            elif j - i == -1:
                pairs.append((j, 3))
        return pairs


DEFAULT_GRAPH = HandGraph()


def _check_frame(frame: np.ndarray, graph: HandGraph) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-2:] != (graph.n_joints, 3):
        raise InvalidInput(
            f"expected (..., {graph.n_joints}, 3) joint coordinates, got {frame.shape}"
        )
    if not np.all(np.isfinite(frame)):
        raise InvalidInput("joint coordinates contain non-finite values")
    return frame


def _check_weights(weights: np.ndarray) -> np.ndarray:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 3 or weights.shape[0] != N_LABELS or weights.shape[2] != 3:
        raise InvalidInput(f"expected (3, d1, 3) filter weights, got {weights.shape}")
    return weights


def graph_conv(frame: np.ndarray, weights: np.ndarray, graph: HandGraph = DEFAULT_GRAPH) -> np.ndarray:
    """Per-node features: sum over labeled neighbors of w_label^T p_j.

    frame: (..., n_joints, 3); weights: (3, d1, 3) indexed [label-1, channel].
    Returns (..., n_out_nodes, d1) covering nodes 3..n_joints.
    """
    frame = _check_frame(frame, graph)
    weights = _check_weights(weights)
    out = frame[..., graph._self_idx, :] @ weights[0].T
    out += graph._succ_mask * (frame[..., graph._succ_idx, :] @ weights[1].T)
    out += graph._pred_mask * (frame[..., graph._pred_idx, :] @ weights[2].T)
    return out


def graph_conv_backward(
    frame: np.ndarray,
    weights: np.ndarray,
    grad_out: np.ndarray,
    graph: HandGraph = DEFAULT_GRAPH,
):
    """Exact adjoint of graph_conv: (coordinate gradients, weight gradients)."""
    frame = _check_frame(frame, graph)
    weights = _check_weights(weights)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != frame.shape[:-2] + (graph.n_out_nodes, weights.shape[1]):
        raise InvalidInput(f"grad_out shape {grad_out.shape} does not match conv output")

    grad_frame = np.zeros_like(frame)
    grad_weights = np.zeros_like(weights)
    gathered = (
        (graph._self_idx, np.ones((graph.n_out_nodes, 1)), 0),
        (graph._succ_idx, graph._succ_mask, 1),
        (graph._pred_idx, graph._pred_mask, 2),
    )
    flat_go = grad_out.reshape(-1, graph.n_out_nodes, weights.shape[1])
    flat_frame = frame.reshape(-1, graph.n_joints, 3)
    flat_gframe = grad_frame.reshape(-1, graph.n_joints, 3)
    for idx, mask, label in gathered:
        masked = flat_go * mask          # (B, n_out, d1)
        contrib = masked @ weights[label]  # (B, n_out, 3)
        np.add.at(flat_gframe, (slice(None), idx), contrib)
        grad_weights[label] = np.einsum("bnc,bnx->cx", masked, flat_frame[:, idx])
    return grad_frame, grad_weights


def finger_partition(features: np.ndarray, graph: HandGraph = DEFAULT_GRAPH) -> np.ndarray:
    """Split conv output (..., n_out_nodes, d1) into per-finger blocks.

    Returns (..., n_fingers, joints_per_finger, d1); fingers in joint-index
    order, which is exactly the chain order of the graph.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-2] != graph.n_out_nodes:
        raise InvalidInput(f"expected {graph.n_out_nodes} node features, got {features.shape}")
    shape = features.shape[:-2] + (graph.n_fingers, graph.joints_per_finger, features.shape[-1])
    return features.reshape(shape)
