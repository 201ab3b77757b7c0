"""Independent oracles used by the test suite.

Everything here is written against the mathematical definitions only: a
plain-numpy forward pass of the skip MLP, the four-term field loss, and a
central finite-difference gradient. None of it calls into the library's tape
machinery, so agreement between the two is evidence, not tautology.
"""

import numpy as np


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x, beta):
    return np.logaddexp(0.0, beta * x) / beta


def layer_dims(depth, hidden, skip_at):
    dims = []
    has_skip = 0 < skip_at < depth
    for layer in range(1, depth + 1):
        in_dim = 3 if layer == 1 else hidden
        out_dim = 1 if layer == depth else hidden
        if has_skip and layer == skip_at:
            out_dim = hidden - 3
        dims.append((out_dim, in_dim))
    return dims


def unflatten(flat, depth, hidden, skip_at):
    weights, biases, k = [], [], 0
    for out_dim, in_dim in layer_dims(depth, hidden, skip_at):
        weights.append(flat[k:k + out_dim * in_dim].reshape(out_dim, in_dim))
        k += out_dim * in_dim
        biases.append(flat[k:k + out_dim])
        k += out_dim
    assert k == flat.size
    return weights, biases


def reference_forward(flat, depth, hidden, skip_at, beta, X, with_gradient=False):
    """Forward pass (and analytic spatial gradient) of the skip MLP."""
    weights, biases = unflatten(flat, depth, hidden, skip_at)
    has_skip = 0 < skip_at < depth
    a = X
    jac = np.broadcast_to(np.eye(3)[None], (len(X), 3, 3)).copy()
    for layer in range(1, depth + 1):
        W, b = weights[layer - 1], biases[layer - 1]
        if has_skip and layer == skip_at + 1:
            h = hidden - 3
            u = a @ W[:, :h].T + X @ W[:, h:].T + b
            ju = np.einsum("dp,npk->ndk", W[:, :h], jac) + W[None, :, h:]
        else:
            u = a @ W.T + b
            ju = np.einsum("dp,npk->ndk", W, jac)
        if layer == depth:
            return (u[:, 0], ju[:, 0, :]) if with_gradient else u[:, 0]
        s = sigmoid(beta * u)
        a = softplus(u, beta)
        jac = s[:, :, None] * ju
    raise AssertionError


def reference_loss(flat, depth, hidden, skip_at, beta, on, normals, off,
                   lambdas=(3000.0, 100.0, 50.0, 100.0), rho=100.0,
                   use_off_term=False):
    """Four-term field loss: means per point set, normal term skips
    points whose estimated gradient norm is below 1e-12."""
    f_on, g_on = reference_forward(flat, depth, hidden, skip_at, beta, on,
                                   with_gradient=True)
    dist_on = np.abs(f_on).mean()
    norms_on = np.sqrt((g_on ** 2).sum(axis=1) + 1e-24)
    all_norms = norms_on
    dist_off = 0.0
    if len(off):
        f_off, g_off = reference_forward(flat, depth, hidden, skip_at, beta, off,
                                         with_gradient=True)
        all_norms = np.concatenate([norms_on, np.sqrt((g_off ** 2).sum(axis=1) + 1e-24)])
        dist_off = np.exp(-rho * np.abs(f_off)).mean()
    eik = ((all_norms - 1.0) ** 2).mean()
    keep = norms_on >= 1e-12
    unit = g_on[keep] / norms_on[keep][:, None]
    dots = (unit * normals[keep]).sum(axis=1)
    per_point = np.abs(1.0 - dots) + np.abs(unit - normals[keep]).sum(axis=1)
    normal_term = per_point.mean() if keep.any() else 0.0
    total = lambdas[0] * dist_on + lambdas[2] * eik + lambdas[3] * normal_term
    if use_off_term:
        total += lambdas[1] * dist_off
    return total


def fd_gradient(func, x0, eps=1e-6):
    """Central finite differences of a scalar function, coordinate by coordinate."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = x0.ravel()
    g = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = func(x0)
        flat[i] = orig - eps
        lo = func(x0)
        flat[i] = orig
        g[i] = (hi - lo) / (2.0 * eps)
    return grad


def rel_err(a, b, floor=1e-8):
    return np.abs(a - b) / (np.abs(b) + floor)
