"""Finite-difference verification of every analytic backward pass.

Each check builds the scalar probe L(theta) = <C, layer(theta)> for a random
symmetric cotangent C (or the cross-entropy loss for the composed network),
compares the analytic gradient against central differences at h = 1e-5, and
reports the worst relative error over seeded random instances.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import linalg, network, optim, skeleton, spd_ops
from .network import NetworkConfig
from .skeleton import HandGraph

DEFAULT_H = 1e-5
THRESHOLD = 1e-4


def fd_grad(fn, x: np.ndarray, h: float = DEFAULT_H) -> np.ndarray:
    """Central finite differences of a scalar function over an ndarray."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    grad = np.zeros(x.shape)
    for i in range(x.size):
        idx = np.unravel_index(i, x.shape) if x.shape else ()
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        grad[idx] = (fn(xp) - fn(xm)) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(np.asarray(analytic).ravel() - np.asarray(numeric).ravel())
    den = max(np.linalg.norm(np.asarray(numeric).ravel()), 1e-8)
    return float(num / den)


def _random_sym(rng, d):
    a = rng.standard_normal((d, d))
    return 0.5 * (a + a.T)


def _random_spd(rng, d, shift=0.5):
    a = rng.standard_normal((d, d))
    return a @ a.T / d + shift * np.eye(d)


def _check_graph_conv(rng):
    graph = HandGraph(2, 3)
    d1 = 3
    frame = rng.standard_normal((graph.n_joints, 3))
    weights = rng.standard_normal((3, d1, 3))
    cot = rng.standard_normal((graph.n_out_nodes, d1))
    gf, gw = skeleton.graph_conv_backward(frame, weights, cot, graph)
    err_f = rel_error(gf, fd_grad(lambda f: float(np.sum(cot * skeleton.graph_conv(f, weights, graph))), frame))
    err_w = rel_error(gw, fd_grad(lambda w: float(np.sum(cot * skeleton.graph_conv(frame, w, graph))), weights))
    return max(err_f, err_w)


def _check_gauss(rng, mode):
    n, d = 5, 4
    cfg = spd_ops.GaussAggConfig(mode, lambda_reg=0.1)
    vectors = rng.standard_normal((n, d))
    cot = _random_sym(rng, d + 1)
    analytic = spd_ops.gauss_agg_backward(vectors, cfg, cot)
    numeric = fd_grad(lambda v: float(np.sum(cot * spd_ops.gauss_agg(v, cfg))), vectors)
    return rel_error(analytic, numeric)


def _check_spectral(rng, kind):
    d = 5
    if kind == "re_eig":
        eps = 1e-4
        x = _random_spd(rng, d, shift=0.0)
        # Keep eigenvalues away from the clamp kink so FD is valid.
        vals = np.linalg.eigvalsh(x)
        x += (2e-3 - min(vals.min(), 0.0)) * np.eye(d)
        fwd = lambda s: spd_ops.re_eig(0.5 * (s + s.T), eps)
        bwd = lambda s, c, cache: spd_ops.re_eig_backward(s, eps, c, cache)
    else:
        x = _random_spd(rng, d)
        fwd = lambda s: spd_ops.log_eig(0.5 * (s + s.T))
        bwd = spd_ops.log_eig_backward
    cot = _random_sym(rng, d)
    cache = linalg.sym_eig(x)
    analytic = bwd(x, cot, cache)
    numeric = fd_grad(lambda s: float(np.sum(cot * fwd(0.5 * (s + s.T)))), x)
    # FD differentiates through the symmetrization, whose adjoint is the
    # identity on the symmetric analytic gradient.
    return rel_error(analytic, linalg.symmetrize(numeric))


def _check_half_vec(rng):
    d = 6
    y = _random_sym(rng, d)
    cot = rng.standard_normal(spd_ops.half_vec_dim(d))
    analytic = spd_ops.half_vec_adjoint(cot, d)
    numeric = fd_grad(lambda s: float(cot @ spd_ops.half_vec(0.5 * (s + s.T))), y)
    return rel_error(analytic, linalg.symmetrize(numeric))


def _check_spat_agg(rng):
    n_l, d_in, d_out = 3, 5, 4
    inputs = np.stack([_random_spd(rng, d_in) for _ in range(n_l)])
    weights = np.stack(
        [linalg.qr_orthonormalize(rng.standard_normal((d_out, d_in))) for _ in range(n_l)]
    )
    cot = _random_sym(rng, d_out)
    gx, gw = spd_ops.spd_spat_agg_backward(inputs, weights, cot)
    err_x = rel_error(
        gx, fd_grad(lambda xs: float(np.sum(cot * spd_ops.spd_spat_agg(xs, weights))), inputs)
    )
    err_w = rel_error(
        gw, fd_grad(lambda ws: float(np.sum(cot * spd_ops.spd_spat_agg(inputs, ws))), weights)
    )
    return max(err_x, err_w)


def _check_fc(rng):
    k, d = 4, 6
    w = rng.standard_normal((k, d))
    b = rng.standard_normal(k)
    x = rng.standard_normal(d)
    label = int(rng.integers(1, k + 1))

    def loss(wv, bv, xv):
        logits = wv @ xv + bv
        shifted = logits - logits.max()
        return float(np.log(np.exp(shifted).sum()) - shifted[label - 1])

    p = network.softmax(w @ x + b)
    dlogits = p.copy()
    dlogits[label - 1] -= 1.0
    gw = np.outer(dlogits, x)
    gb = dlogits
    gx = w.T @ dlogits
    errs = [
        rel_error(gw, fd_grad(lambda wv: loss(wv, b, x), w)),
        rel_error(gb, fd_grad(lambda bv: loss(w, bv, x), b)),
        rel_error(gx, fd_grad(lambda xv: loss(w, b, xv), x)),
    ]
    return max(errs)


def toy_config(n_classes: int = 3) -> NetworkConfig:
    return NetworkConfig(
        d1=2, n_T=2, n_F=4, eps=1e-4, lambda_reg=1e-3,
        n_classes=n_classes, n_fingers=2, joints_per_finger=2, d_spat=4,
    )


def _check_network(rng):
    cfg = toy_config()
    graph = cfg.graph()
    params = optim.init_params(cfg, seed=int(rng.integers(1 << 31)))
    batch = [
        (rng.standard_normal((cfg.n_F, cfg.n_joints, 3)), int(rng.integers(1, cfg.n_classes + 1)))
        for _ in range(2)
    ]

    def loss_of(vec):
        p = params.from_vector(vec)
        loss, _ = network.loss_and_backward(batch, p, cfg, graph)
        return loss

    _, grads = network.loss_and_backward(batch, params, cfg, graph)
    numeric = fd_grad(loss_of, params.to_vector())
    return rel_error(grads.to_vector(), numeric)


LAYERS = {
    "graph_conv": _check_graph_conv,
    "gauss_agg_biased": lambda rng: _check_gauss(rng, "biased"),
    "gauss_agg_unbiased": lambda rng: _check_gauss(rng, "unbiased"),
    "re_eig": lambda rng: _check_spectral(rng, "re_eig"),
    "log_eig": lambda rng: _check_spectral(rng, "log_eig"),
    "half_vec": _check_half_vec,
    "spd_spat_agg": _check_spat_agg,
    "fc": _check_fc,
    "network": _check_network,
}


def run(seed: int = 0, n_instances: int = 20, layers=None, corrupt: bool = False):
    """Max relative FD error per layer; ``corrupt`` is a negative-control
    hook that perturbs each analytic result so failures stay detectable."""
    results = {}
    names = layers or list(LAYERS)
    for name in names:
        if name not in LAYERS:
            raise KeyError(f"unknown layer {name!r}; choose from {sorted(LAYERS)}")
        check = LAYERS[name]
        count = n_instances if name != "network" else max(1, n_instances // 4)
        worst = 0.0
        for k in range(count):
            rng = np.random.default_rng((seed, zlib.crc32(name.encode()), k))
            err = check(rng)
            if corrupt:
                err += 1.0
            worst = max(worst, err)
        results[name] = worst
    return results


def format_table(results) -> str:
    lines = [f"{'layer':<20s} {'max rel err':>12s}  status"]
    for name, err in results.items():
        status = "PASS" if err < THRESHOLD else "FAIL"
        lines.append(f"{name:<20s} {err:>12.3e}  {status}")
    return "\n".join(lines)
