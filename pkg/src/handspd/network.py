"""Full network assembly and its backward pass.

Pipeline per sequence (one branch per finger):

    coordinates -> graph_conv -> per-finger per-frame GaussAgg (unbiased)
    -> ReEig -> per pyramid range: LogEig each frame -> HalfVec -> GaussAgg
    (biased + ridge) -> SPDSpatAgg over all branches/ranges -> LogEig
    -> HalfVec -> affine FC -> logits (softmax lives in the loss).

The per-frame spectral layers are evaluated batched over frames and fingers;
``tests/oracles.py`` holds a straight-line per-equation reference the batched
path is checked against.

Checkpoint format (little-endian):
    magic b"SPDN" | uint32 version=1
    int64  d1, n_T, n_F, n_classes, d_spat, n_fingers, joints_per_finger
    float64 eps, lambda_reg
    float64 conv weights  (3 * d1 * 3, row-major [label, channel, xyz])
    float64 spat weights  (n_L * d_spat * temp_dim, row-major per matrix,
                           branch-major: finger 1..n_fingers, ranges level-major)
    float64 fc weight     (n_classes * feature_dim, row-major)
    float64 fc bias       (n_classes)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import linalg, skeleton, spd_ops
from .errors import InvalidInput, SpectralDomainError
from .linalg import EigenPair
from .skeleton import HandGraph

CHECKPOINT_MAGIC = b"SPDN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    d1: int = 9
    n_T: int = 3
    n_F: int = 171
    eps: float = 1e-4
    lambda_reg: float = 1e-4
    n_classes: int = 14
    n_fingers: int = 5
    joints_per_finger: int = 4
    d_spat: int | None = None

    def __post_init__(self):
        if min(self.d1, self.n_T, self.n_F, self.n_classes) < 1:
            raise InvalidInput("d1, n_T, n_F and n_classes must be positive")
        if self.n_classes < 2:
            raise InvalidInput("need at least two classes")
        if self.eps <= 0:
            raise InvalidInput("eps must be positive")
        if self.lambda_reg < 0:
            raise InvalidInput("lambda_reg must be nonnegative")
        if self.d_spat is None:
            object.__setattr__(self, "d_spat", self.temp_dim)
        if not 1 <= self.d_spat <= self.temp_dim:
            raise InvalidInput(f"d_spat must be in [1, {self.temp_dim}]")
        if self.n_F < self.n_T:
            raise InvalidInput("sequence length must be at least n_T")

    @property
    def frame_spd_dim(self) -> int:
        return self.d1 + 1

    @property
    def half_dim(self) -> int:
        return spd_ops.half_vec_dim(self.frame_spd_dim)

    @property
    def temp_dim(self) -> int:
        return self.half_dim + 1

    @property
    def n_Q(self) -> int:
        return self.n_T * (self.n_T + 1) // 2

    @property
    def n_L(self) -> int:
        return self.n_fingers * self.n_Q

    @property
    def feature_dim(self) -> int:
        return spd_ops.half_vec_dim(self.d_spat)

    @property
    def n_joints(self) -> int:
        return 2 + self.n_fingers * self.joints_per_finger

    def graph(self) -> HandGraph:
        return HandGraph(self.n_fingers, self.joints_per_finger)


@dataclass
class NetworkParams:
    """All learnable weights; also reused as the container for gradients."""

    conv: np.ndarray       # (3, d1, 3)
    spat: np.ndarray       # (n_L, d_spat, temp_dim), orthonormal rows each
    fc_weight: np.ndarray  # (n_classes, feature_dim)
    fc_bias: np.ndarray    # (n_classes,)

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.conv.copy(), self.spat.copy(), self.fc_weight.copy(), self.fc_bias.copy()
        )

    def zeros_like(self) -> "NetworkParams":
        return NetworkParams(
            np.zeros_like(self.conv),
            np.zeros_like(self.spat),
            np.zeros_like(self.fc_weight),
            np.zeros_like(self.fc_bias),
        )

    def add_(self, other: "NetworkParams") -> "NetworkParams":
        self.conv += other.conv
        self.spat += other.spat
        self.fc_weight += other.fc_weight
        self.fc_bias += other.fc_bias
        return self

    def to_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.conv.ravel(), self.spat.ravel(), self.fc_weight.ravel(), self.fc_bias.ravel()]
        )

    def from_vector(self, vec: np.ndarray) -> "NetworkParams":
        """New params with this object's shapes filled from a flat vector."""
        out = []
        offset = 0
        for arr in (self.conv, self.spat, self.fc_weight, self.fc_bias):
            out.append(vec[offset : offset + arr.size].reshape(arr.shape).copy())
            offset += arr.size
        if offset != vec.size:
            raise InvalidInput(f"vector length {vec.size}, expected {offset}")
        return NetworkParams(*out)

    def validate_stiefel(self, tol: float = 1e-8):
        for i, w in enumerate(self.spat):
            err = np.abs(w @ w.T - np.eye(w.shape[0])).max()
            if err >= tol:
                raise InvalidInput(f"spat weight {i} is not row-orthonormal (err {err:.2e})")


@dataclass
class LayerTape:
    """Forward intermediates consumed by the backward pass."""

    frames: np.ndarray            # (n_F, n_joints, 3)
    finger_feats: np.ndarray      # (S, n_F, J, d1)
    frame_mu: np.ndarray          # (S, n_F, d1)
    frame_centered: np.ndarray    # (S, n_F, J, d1)
    frame_eig: EigenPair          # of the pre-ReEig frame matrices, batched
    clamped_values: np.ndarray    # (S, n_F, m) eigenvalues after ReEig
    z: np.ndarray                 # (S, n_F, half_dim)
    ranges: list                  # pyramid (t_b, t_e), 1-based inclusive
    range_mu: np.ndarray          # (S, n_Q, half_dim)
    temp_outputs: np.ndarray      # (n_L, D, D) SPDTempAgg outputs X4
    final_eig: EigenPair          # of the SPDSpatAgg output
    feature: np.ndarray           # (feature_dim,) FC input
    logits: np.ndarray            # (n_classes,)


def pyramid_split(n_F: int, n_T: int) -> list[tuple[int, int]]:
    """Level-major even subdivision: level i contributes i ranges tiling [1, n_F]."""
    if n_T < 1 or n_F < n_T:
        raise InvalidInput(f"need n_F >= n_T >= 1, got n_F={n_F}, n_T={n_T}")
    ranges = []
    for level in range(1, n_T + 1):
        for j in range(1, level + 1):
            ranges.append(((j - 1) * n_F // level + 1, j * n_F // level))
    return ranges


def _as_frames(seq) -> np.ndarray:
    if isinstance(seq, tuple):
        seq = seq[0]
    frames = getattr(seq, "frames", seq)
    return np.asarray(frames, dtype=np.float64)


def _label_of(seq, n_classes: int) -> int:
    if isinstance(seq, tuple):
        return int(seq[1])
    if n_classes == 28 and getattr(seq, "label_28", None) is not None:
        return int(seq.label_28)
    return int(seq.label_14)


def _batched_gauss(vectors: np.ndarray, denom: int, n: int, lambda_reg: float):
    """Gaussian embedding over the second-to-last axis of (..., n, d)."""
    mu = vectors.mean(axis=-2)
    centered = vectors - mu[..., None, :]
    sigma = np.swapaxes(centered, -1, -2) @ centered / denom
    d = vectors.shape[-1]
    out = np.zeros(vectors.shape[:-2] + (d + 1, d + 1))
    out[..., :d, :d] = sigma + mu[..., :, None] * mu[..., None, :]
    idx = np.arange(d)
    out[..., idx, idx] += lambda_reg
    out[..., :d, d] = mu
    out[..., d, :d] = mu
    out[..., d, d] = 1.0
    return out, mu, centered


def forward(seq, params: NetworkParams, cfg: NetworkConfig, graph: HandGraph | None = None, debug: bool = False):
    """Run the full pipeline; returns (logits, final_spd, tape)."""
    graph = graph or cfg.graph()
    frames = _as_frames(seq)
    if frames.shape != (cfg.n_F, cfg.n_joints, 3):
        raise InvalidInput(
            f"sequence shape {frames.shape}, expected {(cfg.n_F, cfg.n_joints, 3)}"
        )

    feats = skeleton.graph_conv(frames, params.conv, graph)        # (n_F, n_out, d1)
    fingers = skeleton.finger_partition(feats, graph)              # (n_F, S, J, d1)
    fingers = np.ascontiguousarray(fingers.transpose(1, 0, 2, 3))  # (S, n_F, J, d1)

    j = cfg.joints_per_finger
    x2, frame_mu, frame_centered = _batched_gauss(fingers, j - 1, j, 0.0)
    frame_eig = linalg.sym_eig_batch(x2)
    clamped = np.maximum(frame_eig.values, cfg.eps)
    if debug:
        assert clamped.min() >= cfg.eps * (1 - 1e-6)
    # ReEig then LogEig share the eigenbasis: clamping preserves the
    # descending order, so (U, clamped) is a valid eigendecomposition of X3.
    y3 = (frame_eig.vectors * np.log(clamped)[..., None, :]) @ np.swapaxes(
        frame_eig.vectors, -1, -2
    )
    z = spd_ops.half_vec(linalg.symmetrize(y3))                    # (S, n_F, hv)

    ranges = pyramid_split(cfg.n_F, cfg.n_T)
    temp = np.empty((cfg.n_fingers, cfg.n_Q, cfg.temp_dim, cfg.temp_dim))
    range_mu = np.empty((cfg.n_fingers, cfg.n_Q, cfg.half_dim))
    for q, (tb, te) in enumerate(ranges):
        zq = z[:, tb - 1 : te]
        n = te - tb + 1
        temp[:, q], range_mu[:, q], _ = _batched_gauss(zq, n, n, cfg.lambda_reg)
    temp_flat = temp.reshape(cfg.n_L, cfg.temp_dim, cfg.temp_dim)
    if debug:
        assert np.linalg.eigvalsh(temp_flat).min() > 0

    final_spd = spd_ops.spd_spat_agg(temp_flat, params.spat)
    final_eig = linalg.sym_eig_batch(final_spd)
    if final_eig.values.min() <= 0:
        raise SpectralDomainError(
            "non-positive eigenvalue in the aggregated SPD matrix",
            eigenvalue=float(final_eig.values.min()),
            context="log_eig(final_spd)",
        )
    y = linalg.spectral_apply_cached(final_eig, linalg.LOG)
    feature = spd_ops.half_vec(y)                                  # (feature_dim,)
    logits = params.fc_weight @ feature + params.fc_bias

    tape = LayerTape(
        frames=frames,
        finger_feats=fingers,
        frame_mu=frame_mu,
        frame_centered=frame_centered,
        frame_eig=frame_eig,
        clamped_values=clamped,
        z=z,
        ranges=ranges,
        range_mu=range_mu,
        temp_outputs=temp_flat,
        final_eig=final_eig,
        feature=feature,
        logits=logits,
    )
    return logits, final_spd, tape


def extract_feature(seq, params: NetworkParams, cfg: NetworkConfig, graph: HandGraph | None = None) -> np.ndarray:
    """Half-vectorized matrix logarithm of the final SPD output (the SVM input)."""
    _, _, tape = forward(seq, params, cfg, graph)
    return tape.feature


def _gauss_backward_batched(centered: np.ndarray, mu: np.ndarray, grad_out: np.ndarray, denom: int, n: int):
    """Batched adjoint of the Gaussian embedding through mu and Sigma."""
    d = centered.shape[-1]
    a = linalg.symmetrize(grad_out[..., :d, :d])
    b = 0.5 * (grad_out[..., :d, d] + grad_out[..., d, :d])
    amu = (a @ mu[..., :, None])[..., 0]
    return (2.0 / denom) * centered @ a + ((2.0 * amu + 2.0 * b) / n)[..., None, :]


def backward(dlogits: np.ndarray, tape: LayerTape, params: NetworkParams, cfg: NetworkConfig, graph: HandGraph | None = None):
    """Reverse traversal of the tape; returns (grads, coordinate gradients).

    Gradients are Euclidean (un-projected) for the Stiefel parameters.
    """
    graph = graph or cfg.graph()
    grads = params.zeros_like()
    grads.fc_weight = np.outer(dlogits, tape.feature)
    grads.fc_bias = dlogits.copy()

    dfeature = params.fc_weight.T @ dlogits
    dy = spd_ops.half_vec_adjoint(dfeature, cfg.d_spat)
    dfinal = linalg.spectral_fn_backward_cached(linalg.LOG, dy, tape.final_eig)
    dtemp, grads.spat = spd_ops.spd_spat_agg_backward(tape.temp_outputs, params.spat, dfinal)
    dtemp = dtemp.reshape(cfg.n_fingers, cfg.n_Q, cfg.temp_dim, cfg.temp_dim)

    dz = np.zeros_like(tape.z)
    for q, (tb, te) in enumerate(tape.ranges):
        n = te - tb + 1
        centered = tape.z[:, tb - 1 : te] - tape.range_mu[:, q][:, None, :]
        dz[:, tb - 1 : te] += _gauss_backward_batched(
            centered, tape.range_mu[:, q], dtemp[:, q], n, n
        )

    dy3 = spd_ops.half_vec_adjoint(dz, cfg.frame_spd_dim)
    log_cache = EigenPair(tape.frame_eig.vectors, tape.clamped_values)
    dx3 = linalg.spectral_fn_backward_cached(linalg.LOG, dy3, log_cache)
    dx2 = linalg.spectral_fn_backward_cached(linalg.clamp_fn(cfg.eps), dx3, tape.frame_eig)

    j = cfg.joints_per_finger
    dfingers = _gauss_backward_batched(tape.frame_centered, tape.frame_mu, dx2, j - 1, j)
    dfeats = np.ascontiguousarray(dfingers.transpose(1, 0, 2, 3)).reshape(
        cfg.n_F, graph.n_out_nodes, cfg.d1
    )
    dframe, grads.conv = skeleton.graph_conv_backward(tape.frames, params.conv, dfeats, graph)
    return grads, dframe


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_backward(batch, params: NetworkParams, cfg: NetworkConfig, graph: HandGraph | None = None, with_logits: bool = False):
    """Mean softmax cross-entropy over a batch plus full parameter gradients.

    Batch items are GestureSequence-like objects (``.frames`` plus labels)
    or (frames, label) tuples; labels are 1-based.
    """
    if not batch:
        raise InvalidInput("batch must be non-empty")
    graph = graph or cfg.graph()
    total = params.zeros_like()
    loss = 0.0
    all_logits = []
    for item in batch:
        label = _label_of(item, cfg.n_classes)
        if not 1 <= label <= cfg.n_classes:
            raise InvalidInput(f"label {label} outside [1, {cfg.n_classes}]")
        logits, _, tape = forward(item, params, cfg, graph)
        p = softmax(logits)
        shifted = logits - logits.max()
        loss += float(np.log(np.exp(shifted).sum()) - shifted[label - 1]) / len(batch)
        dlogits = p.copy()
        dlogits[label - 1] -= 1.0
        dlogits /= len(batch)
        grads, _ = backward(dlogits, tape, params, cfg, graph)
        total.add_(grads)
        if with_logits:
            all_logits.append(logits)
    if with_logits:
        return loss, total, np.array(all_logits)
    return loss, total


def save_checkpoint(path, params: NetworkParams, cfg: NetworkConfig):
    """Write the versioned binary checkpoint (layout in the module docstring)."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(
            struct.pack(
                "<7q",
                cfg.d1,
                cfg.n_T,
                cfg.n_F,
                cfg.n_classes,
                cfg.d_spat,
                cfg.n_fingers,
                cfg.joints_per_finger,
            )
        )
        fh.write(struct.pack("<2d", cfg.eps, cfg.lambda_reg))
        for arr in (params.conv, params.spat, params.fc_weight, params.fc_bias):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (params, cfg)."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise InvalidInput(f"{path}: not a network checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise InvalidInput(f"{path}: unsupported checkpoint version {version}")
        d1, n_t, n_f, n_classes, d_spat, n_fingers, jpf = struct.unpack("<7q", fh.read(56))
        eps, lambda_reg = struct.unpack("<2d", fh.read(16))
        cfg = NetworkConfig(
            d1=d1,
            n_T=n_t,
            n_F=n_f,
            eps=eps,
            lambda_reg=lambda_reg,
            n_classes=n_classes,
            n_fingers=n_fingers,
            joints_per_finger=jpf,
            d_spat=d_spat,
        )
        shapes = [
            (3, cfg.d1, 3),
            (cfg.n_L, cfg.d_spat, cfg.temp_dim),
            (cfg.n_classes, cfg.feature_dim),
            (cfg.n_classes,),
        ]
        arrays = []
        for shape in shapes:
            count = int(np.prod(shape))
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise InvalidInput(f"{path}: truncated checkpoint")
            arrays.append(np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape))
        if fh.read(1):
            raise InvalidInput(f"{path}: trailing bytes in checkpoint")
    return NetworkParams(*arrays), cfg
