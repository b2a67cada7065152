"""Unvalidated array kernels for the solvers' inner loops.

All functions take plain ndarrays, assume valid stochastic inputs, and use
natural logs. Gradients are with respect to raw matrix entries; additive
constants that vanish on the simplex tangent space are dropped.
"""

import numpy as np
from scipy.special import softmax, xlogy

TINY = 1e-300


def ent(p, axis=None):
    return -xlogy(p, p).sum(axis=axis)


def mi_cond(p_x, w):
    """I(P_X, W) for row-stochastic ``w``."""
    p_y = p_x @ w
    return max(float(ent(p_y) - np.dot(p_x, ent(w, axis=1))), 0.0)


def mi_joint(j):
    """Mutual information between the two axes of a 2-D joint table."""
    return max(float(ent(j.sum(1)) + ent(j.sum(0)) - ent(j)), 0.0)


def safe_log_ratio(a, b):
    return np.log(np.maximum(a, TINY)) - np.log(np.maximum(b, TINY))


def row_softmax(theta):
    return softmax(theta, axis=-1)


def softmax_backprop(p, g):
    """Chain rule through a row softmax ``p = softmax(theta)``: returns dF/dtheta."""
    return p * (g - (p * g).sum(axis=-1, keepdims=True))


def logits(m, floor=1e-12):
    """Logits reproducing a stochastic matrix up to a floor on zero entries."""
    return np.log(np.maximum(m, floor))


def system_terms(p_uv, a, b, grads=True):
    """Mutual informations of ``Q_UVZW = P_UV a b`` with their gradients.

    Returns ``(i_vw, i_uz, i_zw, g)``, where ``g`` maps each term name to a
    pair ``(dI/da, dI/db)`` when ``grads`` is set.
    """
    p_u = p_uv.sum(1)
    p_v = p_uv.sum(0)
    p_z = p_u @ a
    p_w = p_z @ b
    p_vw = p_uv.T @ a @ b

    log_uz = safe_log_ratio(a, p_z[None, :])
    log_zw = safe_log_ratio(b, p_w[None, :])
    log_vw = safe_log_ratio(p_vw, np.outer(p_v, p_w))

    i_uz = max(float((p_u[:, None] * a * log_uz).sum()), 0.0)
    i_zw = max(float((p_z[:, None] * b * log_zw).sum()), 0.0)
    i_vw = max(float((p_vw * log_vw).sum()), 0.0)
    if not grads:
        return i_vw, i_uz, i_zw, None

    g = {
        "vw": (p_uv @ log_vw @ b.T, a.T @ p_uv @ log_vw),
        "uz": (p_u[:, None] * log_uz, np.zeros_like(b)),
        # I(Z;W) depends on ``a`` only through P_Z
        "zw": (p_u[:, None] * (b * log_zw).sum(1)[None, :], p_z[:, None] * log_zw),
    }
    return i_vw, i_uz, i_zw, g
