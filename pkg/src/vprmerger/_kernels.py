"""Fused training step for the baseline classifier.

One step touches every FC2 latent weight at least three times (sign for the
forward pass, gradient, Adam moments). Fusing them into two sweeps with numba
is what keeps single-frame training practical. ``baseline_step_reference``
is the plain numpy version of the same math and exists for parity tests.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .nn_core import AdamState, adam_step, softmax_ce


@njit(cache=True, fastmath=True)
def _fused_step(w1, w2, m1, v1, m2, v2, x, keep, label, scale,
                lr, b1, b2, eps, bc1, bc2):
    a, p = w1.shape
    n, b = w2.shape
    e = np.zeros(b, np.float32)
    for j in range(a):
        for i in range(p):
            k = j * p + i
            if keep[k]:
                if w1[j, i] >= 0:
                    e[k] = x[i] * scale
                else:
                    e[k] = -x[i] * scale

    logits = np.empty(n, np.float64)
    for r in range(n):
        acc = 0.0
        for k in range(b):
            if w2[r, k] >= 0:
                acc += e[k]
            else:
                acc -= e[k]
        logits[r] = acc

    mx = logits.max()
    z = 0.0
    for r in range(n):
        z += math.exp(logits[r] - mx)
    log_z = math.log(z)
    loss = log_z - (logits[label] - mx)

    step = lr / bc1
    inv_bc2 = np.float32(1.0) / bc2
    one = np.float32(1.0)
    grad_e = np.zeros(b, np.float32)
    for r in range(n):
        g = math.exp(logits[r] - mx - log_z)
        if r == label:
            g -= 1.0
        gr = np.float32(g)
        for k in range(b):
            w = w2[r, k]
            if w >= 0:
                grad_e[k] += gr
            else:
                grad_e[k] -= gr
            gk = gr * e[k]
            mk = b1 * m2[r, k] + (one - b1) * gk
            vk = b2 * v2[r, k] + (one - b2) * gk * gk
            m2[r, k] = mk
            v2[r, k] = vk
            w -= step * mk / (math.sqrt(vk * inv_bc2) + eps)
            w2[r, k] = min(one, max(-one, w))

    for j in range(a):
        for i in range(p):
            k = j * p + i
            gk = grad_e[k] * scale * x[i] if keep[k] else np.float32(0.0)
            mk = b1 * m1[j, i] + (one - b1) * gk
            vk = b2 * v1[j, i] + (one - b2) * gk * gk
            m1[j, i] = mk
            v1[j, i] = vk
            w = w1[j, i] - step * mk / (math.sqrt(vk * inv_bc2) + eps)
            w1[j, i] = min(one, max(-one, w))
    return loss


def baseline_step(w1: np.ndarray, w2: np.ndarray, opt1: AdamState, opt2: AdamState,
                  x: np.ndarray, keep: np.ndarray, label: int, dropout_rate: float) -> float:
    """One dropout forward, softmax-CE backward and Adam update; returns the loss.

    ``w1``/``w2`` are the float32 latent matrices, updated in place together
    with the Adam moments. ``keep`` is the boolean dropout mask over FC1's
    expanded output.
    """
    opt1.step += 1
    opt2.step += 1
    t = opt2.step
    bc1 = 1.0 - opt2.beta1**t
    bc2 = 1.0 - opt2.beta2**t
    scale = np.float32(1.0 / (1.0 - dropout_rate))
    return float(_fused_step(
        w1, w2, opt1.m, opt1.v, opt2.m, opt2.v,
        np.ascontiguousarray(x, dtype=np.float32), keep, label, scale,
        np.float32(opt2.lr), np.float32(opt2.beta1), np.float32(opt2.beta2),
        np.float32(opt2.eps), np.float32(bc1), np.float32(bc2),
    ))


def baseline_step_reference(w1, w2, opt1, opt2, x, keep, label, dropout_rate) -> float:
    x = np.asarray(x, dtype=np.float64)
    mask = keep.astype(np.float64) / (1.0 - dropout_rate)
    s1 = np.where(w1 >= 0, 1.0, -1.0)
    s2 = np.where(w2 >= 0, 1.0, -1.0)
    e = (s1 * x).ravel() * mask
    loss, g = softmax_ce(s2 @ e, label)
    grad_e = (g @ s2) * mask
    grad2 = np.outer(g, e)
    grad1 = grad_e.reshape(w1.shape) * x
    w1_64, w2_64 = w1.astype(np.float64), w2.astype(np.float64)
    adam_step(w1_64, grad1, opt1, clamp=True)
    adam_step(w2_64, grad2, opt2, clamp=True)
    w1[...] = w1_64
    w2[...] = w2_64
    return loss
