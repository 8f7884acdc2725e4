"""SPD layer primitives: GaussAgg, ReEig, LogEig, HalfVec, SPDSpatAgg.

Each layer has a forward and an exact backward (adjoint).  Forwards return
plain matrices; eigendecomposition caches needed by the spectral backwards
are produced by the caller (see ``network.LayerTape``) so that every
function here stays pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import InvalidInput
from .linalg import EigenPair

BIASED = "biased"
UNBIASED = "unbiased"


@dataclass(frozen=True)
class GaussAggConfig:
    """Covariance normalization mode plus an optional ridge on Sigma."""

    normalization: str = BIASED
    lambda_reg: float = 0.0

    def __post_init__(self):
        if self.normalization not in (BIASED, UNBIASED):
            raise InvalidInput(f"unknown normalization {self.normalization!r}")
        if self.lambda_reg < 0:
            raise InvalidInput("lambda_reg must be nonnegative")


def _check_vectors(vectors: np.ndarray, cfg: GaussAggConfig) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise InvalidInput(f"expected an (n, d) array, got shape {vectors.shape}")
    n = vectors.shape[0]
    if n < 1 or (cfg.normalization == UNBIASED and n < 2):
        raise InvalidInput(f"{cfg.normalization} covariance needs more samples (got {n})")
    return vectors


def gauss_agg(vectors: np.ndarray, cfg: GaussAggConfig) -> np.ndarray:
    """Embed sample statistics into the (d+1)x(d+1) Gaussian block matrix.

    Returns [[Sigma + lambda_reg*I + mu mu^T, mu], [mu^T, 1]] with mu the
    sample mean and Sigma the biased (1/n) or unbiased (1/(n-1)) covariance.
    """
    vectors = _check_vectors(vectors, cfg)
    n, d = vectors.shape
    mu = vectors.mean(axis=0)
    centered = vectors - mu
    denom = n if cfg.normalization == BIASED else n - 1
    sigma = centered.T @ centered / denom
    out = np.empty((d + 1, d + 1))
    out[:d, :d] = sigma + np.outer(mu, mu)
    out[:d, :d][np.diag_indices(d)] += cfg.lambda_reg
    out[:d, d] = mu
    out[d, :d] = mu
    out[d, d] = 1.0
    return out


def gauss_agg_backward(vectors: np.ndarray, cfg: GaussAggConfig, grad_out: np.ndarray) -> np.ndarray:
    """Gradients of <grad_out, gauss_agg(vectors)> w.r.t. each input vector."""
    vectors = _check_vectors(vectors, cfg)
    n, d = vectors.shape
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (d + 1, d + 1):
        raise InvalidInput(f"grad_out shape {grad_out.shape}, expected {(d + 1, d + 1)}")
    a = linalg.symmetrize(grad_out[:d, :d])
    b = 0.5 * (grad_out[:d, d] + grad_out[d, :d])
    mu = vectors.mean(axis=0)
    centered = vectors - mu
    denom = n if cfg.normalization == BIASED else n - 1
    # d<A, Sigma>/dz_k = (2/denom) A (z_k - mu); the mean-shift term cancels
    # because the centered vectors sum to zero.
    return (2.0 / denom) * centered @ a + (2.0 * a @ mu + 2.0 * b) / n


def re_eig(x: np.ndarray, eps: float) -> np.ndarray:
    """Clamp eigenvalues of a symmetric matrix from below at eps."""
    if eps <= 0:
        raise InvalidInput("rectification threshold must be positive")
    return linalg.spectral_apply(x, linalg.clamp_fn(eps))


def re_eig_backward(x: np.ndarray, eps: float, grad_out: np.ndarray, cache: EigenPair) -> np.ndarray:
    if eps <= 0:
        raise InvalidInput("rectification threshold must be positive")
    return linalg.spectral_fn_backward(x, linalg.clamp_fn(eps), grad_out, cache)


def log_eig(x: np.ndarray) -> np.ndarray:
    """Matrix logarithm of an SPD matrix."""
    return linalg.spectral_apply(x, linalg.LOG)


def log_eig_backward(x: np.ndarray, grad_out: np.ndarray, cache: EigenPair) -> np.ndarray:
    return linalg.spectral_fn_backward(x, linalg.LOG, grad_out, cache)


def half_vec_dim(d: int) -> int:
    return d * (d + 1) // 2


def _triu_rows_cols(d: int):
    return np.triu_indices(d)


def half_vec(y: np.ndarray) -> np.ndarray:
    """Row-major upper-triangle vectorization, off-diagonals scaled by sqrt 2.

    An isometry: the output 2-norm equals the Frobenius norm of the input.
    Supports batched input (..., d, d) -> (..., d(d+1)/2).
    """
    y = np.asarray(y, dtype=np.float64)
    d = y.shape[-1]
    rows, cols = _triu_rows_cols(d)
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
    return y[..., rows, cols] * scale


def half_vec_adjoint(g: np.ndarray, dim: int | None = None) -> np.ndarray:
    """Exact adjoint of half_vec: <g, half_vec(Y)> == <half_vec_adjoint(g), Y>.

    Supports batched input (..., d(d+1)/2) -> (..., d, d).
    """
    g = np.asarray(g, dtype=np.float64)
    length = g.shape[-1]
    if dim is None:
        dim = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if half_vec_dim(dim) != length:
        raise InvalidInput(f"length {length} is not a triangular number for dim {dim}")
    rows, cols = _triu_rows_cols(dim)
    # Off-diagonal mass splits evenly between (i,j) and (j,i): sqrt(2)/2.
    scale = np.where(rows == cols, 1.0, np.sqrt(2.0) / 2.0)
    out = np.zeros(g.shape[:-1] + (dim, dim))
    out[..., rows, cols] = g * scale
    out[..., cols, rows] = g * scale
    return out


def _check_spat(inputs: np.ndarray, weights: np.ndarray):
    inputs = np.asarray(inputs, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[-1] != inputs.shape[-2]:
        raise InvalidInput(f"inputs must be (n_L, d_in, d_in), got {inputs.shape}")
    if weights.ndim != 3 or weights.shape[0] != inputs.shape[0]:
        raise InvalidInput(
            f"need one weight matrix per input: {weights.shape} vs {inputs.shape}"
        )
    if weights.shape[2] != inputs.shape[1]:
        raise InvalidInput(
            f"weight column dim {weights.shape[2]} != input dim {inputs.shape[1]}"
        )
    return inputs, weights


def spd_spat_agg(inputs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """sum_i W_i X_i W_i^T; SPD whenever every X_i is SPD and W_i has full row rank."""
    inputs, weights = _check_spat(inputs, weights)
    terms = weights @ inputs @ np.swapaxes(weights, -1, -2)
    return linalg.symmetrize(terms.sum(axis=0))


def spd_spat_agg_backward(inputs: np.ndarray, weights: np.ndarray, grad_out: np.ndarray):
    """Euclidean gradients (dX_i, dW_i) of <grad_out, spd_spat_agg(...)>.

    dX_i = W_i^T G W_i and dW_i = 2 G W_i X_i for symmetric G; manifold
    projection of the weight gradients happens in the optimizer.
    """
    inputs, weights = _check_spat(inputs, weights)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != (weights.shape[1], weights.shape[1]):
        raise InvalidInput(f"grad_out shape {grad_out.shape} does not match output dim")
    g = linalg.symmetrize(grad_out)
    grad_inputs = np.swapaxes(weights, -1, -2) @ g @ weights
    grad_weights = 2.0 * g @ weights @ inputs
    return grad_inputs, grad_weights
