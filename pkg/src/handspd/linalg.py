"""Dense symmetric linear algebra.

Eigendecomposition with a fixed sign convention, spectral matrix functions
f(S) = U f(V) U^T, the eigendecomposition chain rule (Daleckii-Krein form)
shared by every spectral layer's backward pass, and QR row-orthonormalization
used for Stiefel retractions.

All functions are pure and operate on plain float64 numpy arrays.  Batched
variants accept arrays of shape (..., d, d) and are used by the network for
speed; the unbatched entry points are thin wrappers with input validation.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import InvalidInput, RankError, SpectralDomainError


class EigenPair(NamedTuple):
    """Eigendecomposition S = vectors @ diag(values) @ vectors.T.

    Eigenvalues are sorted descending; each eigenvector's first component
    of magnitude above 1e-12 is positive.
    """

    vectors: np.ndarray
    values: np.ndarray


class SpectralFn(NamedTuple):
    """A scalar map and its derivative, lifted to symmetric matrices."""

    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]


LOG = SpectralFn(np.log, lambda x: 1.0 / x)
EXP = SpectralFn(np.exp, np.exp)
IDENTITY = SpectralFn(lambda x: x, lambda x: np.ones_like(x))


def clamp_fn(eps: float) -> SpectralFn:
    """Eigenvalue rectifier max(eps, x); subgradient 1 at exactly x == eps."""
    return SpectralFn(
        lambda x: np.maximum(x, eps),
        lambda x: np.where(x >= eps, 1.0, 0.0),
    )


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def check_symmetric(s: np.ndarray, name: str = "matrix") -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim < 2 or s.shape[-1] != s.shape[-2]:
        raise InvalidInput(f"{name} must be square, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise InvalidInput(f"{name} has non-finite entries")
    if not np.allclose(s, np.swapaxes(s, -1, -2), rtol=0.0, atol=1e-8 * max(1.0, np.abs(s).max())):
        raise InvalidInput(f"{name} is not symmetric")
    return symmetrize(s)


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    # First component with |v| > 1e-12 made positive, per column.
    significant = np.abs(vectors) > 1e-12
    first = np.argmax(significant, axis=-2)
    lead = np.take_along_axis(vectors, first[..., None, :], axis=-2)
    sign = np.where(lead < 0, -1.0, 1.0)
    return vectors * sign


def sym_eig_batch(s: np.ndarray) -> EigenPair:
    """Batched eigendecomposition of symmetric (..., d, d) arrays.

    No input validation; caller guarantees symmetry and finiteness.
    """
    vals, vecs = np.linalg.eigh(s)
    vals = vals[..., ::-1]
    vecs = vecs[..., ::-1]
    return EigenPair(_fix_signs(np.ascontiguousarray(vecs)), np.ascontiguousarray(vals))


def sym_eig(s: np.ndarray) -> EigenPair:
    """Eigendecomposition of a symmetric matrix, descending eigenvalues."""
    s = check_symmetric(s, "sym_eig input")
    return sym_eig_batch(s)


def _apply_fn(fn: SpectralFn, values: np.ndarray, context: str | None = None) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = fn.f(values)
    bad = ~np.isfinite(out)
    if np.any(bad):
        offending = float(np.asarray(values)[bad].ravel()[0])
        raise SpectralDomainError(
            f"spectral function undefined at eigenvalue {offending!r}",
            eigenvalue=offending,
            context=context,
        )
    return out


def spectral_apply_cached(cache: EigenPair, fn: SpectralFn, context: str | None = None) -> np.ndarray:
    fv = _apply_fn(fn, cache.values, context)
    u = cache.vectors
    return symmetrize((u * fv[..., None, :]) @ np.swapaxes(u, -1, -2))


def spectral_apply(s: np.ndarray, fn: SpectralFn) -> np.ndarray:
    """U diag(f(V)) U^T for the eigendecomposition U V U^T of s."""
    return spectral_apply_cached(sym_eig(s), fn)


def loewner_matrix(values: np.ndarray, fn: SpectralFn) -> np.ndarray:
    """Divided-difference kernel K(i,j) of the Daleckii-Krein chain rule.

    K(i,j) = (f(l_i) - f(l_j)) / (l_i - l_j) away from ties; within the
    guard tau = 1e-10 * max(1, |l_i|, |l_j|) it switches to f'((l_i+l_j)/2),
    the exact limit value, avoiding catastrophic cancellation.
    """
    li = values[..., :, None]
    lj = values[..., None, :]
    diff = li - lj
    tau = 1e-10 * np.maximum(1.0, np.maximum(np.abs(li), np.abs(lj)))
    near = np.abs(diff) <= tau
    fv = _apply_fn(fn, values)
    with np.errstate(divide="ignore", invalid="ignore"):
        quotient = (fv[..., :, None] - fv[..., None, :]) / diff
    deriv = fn.df(0.5 * (li + lj))
    return np.where(near, deriv, quotient)


def spectral_fn_backward(
    s: np.ndarray,
    fn: SpectralFn,
    grad_out: np.ndarray,
    cache: EigenPair,
) -> np.ndarray:
    """Adjoint of spectral_apply: dL/dS given dL/df(S) = grad_out.

    With G = U^T grad_out U, returns U (K * G) U^T where K is the
    divided-difference kernel of ``loewner_matrix``.
    """
    s = np.asarray(s, dtype=np.float64)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape[-2:] != s.shape[-2:]:
        raise InvalidInput(
            f"grad_out shape {grad_out.shape} does not match input shape {s.shape}"
        )
    return spectral_fn_backward_cached(fn, grad_out, cache)


def spectral_fn_backward_cached(fn: SpectralFn, grad_out: np.ndarray, cache: EigenPair) -> np.ndarray:
    u = cache.vectors
    ut = np.swapaxes(u, -1, -2)
    g = ut @ grad_out @ u
    k = loewner_matrix(cache.values, fn)
    return symmetrize(u @ (k * g) @ ut)


def qr_orthonormalize(m: np.ndarray) -> np.ndarray:
    """Orthonormalize the rows of m (shape p x n, p <= n).

    Sign convention: the triangular factor has nonnegative diagonal, making
    the map deterministic and the identity on already-orthonormal input.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidInput(f"expected a 2-d array, got shape {m.shape}")
    rows, cols = m.shape
    if rows > cols:
        raise RankError(f"cannot orthonormalize {rows} rows in dimension {cols}")
    q, r = np.linalg.qr(m.T)
    diag = np.diagonal(r)
    tol = max(m.shape) * np.finfo(np.float64).eps * max(1.0, float(np.abs(r).max()))
    if np.any(np.abs(diag) <= tol):
        raise RankError("input rows are rank-deficient")
    sign = np.where(diag < 0, -1.0, 1.0)
    return (q * sign).T
