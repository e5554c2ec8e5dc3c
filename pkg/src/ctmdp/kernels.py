"""Uniformized kernel, the two discounted Bellman operators, and transient kernels.

``bellman_T`` acts through the uniformized discrete-time kernel
``w/(w+alpha) * (q/w + I)`` with stage cost ``c/(alpha+w)``; ``bellman_T_tilde``
acts through the embedded jump chain with per-action rate ``alpha + q_x(a)``.
Both share the same minimal nonnegative fixed point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import CtmdpModel, Policy, policy_generator

TIE_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class UniformizedKernel:
    """Padded arrays indexed ``[x, a, y]`` / ``[x, a]``; ``mask`` marks admissible slots."""

    alpha: float
    Q: np.ndarray
    defect: np.ndarray
    stage_cost: np.ndarray
    mask: np.ndarray


def _check_alpha(alpha: float) -> None:
    if not alpha > 0 or not math.isfinite(alpha):
        raise ValueError(f"alpha must be positive and finite, got {alpha!r}")


def uniformize(model: CtmdpModel, alpha: float) -> UniformizedKernel:
    _check_alpha(alpha)
    w = model.weight[:, None, None]
    eye = np.eye(model.num_states)[:, None, :]
    mask = model.action_mask
    Q = w / (w + alpha) * (model.rate_tensor / w + eye)
    Q = np.where(mask[:, :, None], Q, 0.0)
    # off-by-rounding negatives on the diagonal when q_x(a) == w(x)
    Q = np.maximum(Q, 0.0)
    wd = model.weight[:, None]
    defect = np.where(mask, alpha / (wd + alpha), 0.0)
    stage = np.where(mask, model.cost_matrix / (alpha + wd), np.inf)
    return UniformizedKernel(float(alpha), Q, defect, stage, mask)


def argmin_lowest(values: np.ndarray, rtol: float = TIE_RTOL) -> np.ndarray:
    """Row-wise argmin, preferring the lowest index among near-ties.

    Entries within ``rtol`` times the row's largest finite magnitude of the
    minimum count as ties. ``inf`` marks padding.
    """
    best = values.min(axis=1)
    finite = np.where(np.isfinite(values), np.abs(values), 0.0)
    scale = finite.max(axis=1)
    tied = values <= (best + rtol * scale)[:, None]
    return tied.argmax(axis=1)


def t_brackets(model: CtmdpModel, alpha: float, v: np.ndarray) -> np.ndarray:
    """Per-(x, a) expression minimized by ``bellman_T``; ``inf`` at padding."""
    w = model.weight
    qv = model.rate_tensor @ v
    out = model.cost_matrix / (alpha + w)[:, None] + (qv + (w * v)[:, None]) / (w + alpha)[:, None]
    return np.where(model.action_mask, out, np.inf)


def bellman_T(model: CtmdpModel, alpha: float, v) -> np.ndarray:
    _check_alpha(alpha)
    v = _nonneg(v, model.num_states)
    return t_brackets(model, alpha, v).min(axis=1)


def t_tilde_brackets(model: CtmdpModel, alpha: float, v: np.ndarray) -> np.ndarray:
    n = model.num_states
    qx = -model.rate_tensor[np.arange(n), :, np.arange(n)]
    off = model.rate_tensor.copy()
    off[np.arange(n), :, np.arange(n)] = 0.0
    denom = alpha + qx
    out = (model.cost_matrix + off @ v) / denom
    return np.where(model.action_mask, out, np.inf)


def bellman_T_tilde(model: CtmdpModel, alpha: float, v) -> np.ndarray:
    _check_alpha(alpha)
    v = _nonneg(v, model.num_states)
    return t_tilde_brackets(model, alpha, v).min(axis=1)


def _nonneg(v, n: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"value vector must have shape ({n},)")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError("value vector must be finite and nonnegative")
    return v


# -- matrix exponential -----------------------------------------------------------


def matrix_exponential_oracle(generator, t: float, atol: float = 1e-9) -> np.ndarray:
    """``exp(t * generator)`` by scaling and squaring of a truncated Taylor series.

    The generator must have nonnegative off-diagonal entries and zero row sums.
    """
    G = np.asarray(generator, dtype=float)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ValueError("generator must be a square matrix")
    if t < 0:
        raise ValueError("t must be nonnegative")
    n = G.shape[0]
    off = G - np.diag(np.diag(G))
    scale = max(1.0, np.abs(G).max(initial=0.0))
    if off.min(initial=0.0) < 0 or np.abs(G.sum(axis=1)).max(initial=0.0) > atol * scale:
        raise ValueError("not a generator: need nonnegative off-diagonals and zero row sums")
    A = t * G
    norm = np.abs(A).sum(axis=1).max(initial=0.0)
    s = max(0, math.ceil(math.log2(norm)) + 1) if norm > 0 else 0
    A = A / 2.0**s
    # ||A|| <= 1/2: 20 Taylor terms leave a remainder below 1e-25
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 21):
        term = term @ A / k
        result = result + term
    for _ in range(s):
        result = result @ result
    return result


def expm_integral(generator, t: float, f) -> np.ndarray:
    """``int_0^t exp(s G) f ds`` through the augmented-matrix exponential."""
    G = np.asarray(generator, dtype=float)
    n = G.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = G
    aug[:n, n] = f
    # the augmented matrix is not a generator, so skip the oracle's validation
    norm = np.abs(t * aug).sum(axis=1).max()
    s = max(0, math.ceil(math.log2(norm)) + 1) if norm > 0 else 0
    A = t * aug / 2.0**s
    result = np.eye(n + 1)
    term = np.eye(n + 1)
    for k in range(1, 21):
        term = term @ A / k
        result = result + term
    for _ in range(s):
        result = result @ result
    return result[:n, n]


# -- transient kernel series ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TransientKernel:
    """Sub-probability matrix ``p(0, x, t, y)`` from the truncated jump series.

    ``terms[k]`` is the exactly-k-jumps contribution, so ``p == terms.sum(0)``.
    """

    t: float
    k_max: int
    p: np.ndarray
    terms: np.ndarray
    nodes: int


def _cheb_lobatto(N: int, t: float) -> np.ndarray:
    j = np.arange(N + 1)
    return 0.5 * t * (1.0 - np.cos(np.pi * j / N))


def _bary_weights(N: int) -> np.ndarray:
    w = np.ones(N + 1)
    w[1::2] = -1.0
    w[0] *= 0.5
    w[-1] *= 0.5
    return w


def _interp_matrix(nodes: np.ndarray, bw: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Barycentric interpolation rows mapping node values to values at ``x``."""
    diff = x[:, None] - nodes[None, :]
    exact = diff == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        M = bw[None, :] / diff
    M = M / M.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        M[hit] = exact[hit].astype(float)
    return M


def _convolution_operators(rates: np.ndarray, t: float, N: int, m: int) -> np.ndarray:
    """Matrices ``K[r]`` with ``(K[r] f)(tau_i) ~ int_0^tau_i e^{-rates[r](tau_i - s)} f(s) ds``.

    ``f`` is given by its values on ``N+1`` Chebyshev-Lobatto nodes of
    ``[0, t]``; the inner integral uses ``m``-point Gauss-Legendre on
    ``[0, tau_i]``.
    """
    nodes = _cheb_lobatto(N, t)
    bw = _bary_weights(N)
    gx, gw = np.polynomial.legendre.leggauss(m)
    K = np.zeros((len(rates), N + 1, N + 1))
    for i, tau in enumerate(nodes):
        if tau == 0.0:
            continue
        s = 0.5 * tau * (gx + 1.0)
        ws = 0.5 * tau * gw
        L = _interp_matrix(nodes, bw, s)
        decay = np.exp(-np.outer(rates, tau - s))
        K[:, i, :] = (decay * ws) @ L
    return K


def _series_terms(Q: np.ndarray, t: float, k_max: int, N: int) -> np.ndarray:
    n = Q.shape[0]
    exit_rates = -np.diag(Q)
    off = Q - np.diag(np.diag(Q))
    nodes = _cheb_lobatto(N, t)
    K = _convolution_operators(exit_rates, t, N, N + 1)
    # F[i, x, y] = p_k(0, x, nodes[i], y)
    F = np.exp(-np.outer(nodes, exit_rates))[:, :, None] * np.eye(n)[None]
    terms = [F[-1].copy()]
    for _ in range(k_max):
        G = np.matmul(off, F).transpose(1, 0, 2)
        F = np.matmul(K, G).transpose(1, 0, 2)
        np.maximum(F, 0.0, out=F)
        terms.append(F[-1].copy())
    return np.array(terms)


def transient_kernel_series(
    model: CtmdpModel,
    policy: Policy,
    t: float,
    k_max: int,
    tol: float = 1e-10,
    max_nodes: int = 512,
) -> TransientKernel:
    """Sum of the k-jump kernels ``p_0 .. p_{k_max}`` at time ``t`` under a stationary policy.

    Each ``p_k`` is the convolution of the sojourn density at the current
    state with ``p_{k-1}`` from the next state. The convolution is evaluated
    spectrally on Chebyshev nodes; the node count doubles until the summed
    kernel changes by less than ``tol``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    Q, _ = policy_generator(model, policy)
    n = model.num_states
    if t == 0:
        terms = np.zeros((k_max + 1, n, n))
        terms[0] = np.eye(n)
        return TransientKernel(0.0, k_max, np.eye(n), terms, 0)
    scale = float(np.abs(np.diag(Q)).max(initial=0.0)) * t
    N = 16
    while N < scale + 16:
        N *= 2
    prev = _series_terms(Q, t, k_max, N)
    while True:
        N2 = 2 * N
        cur = _series_terms(Q, t, k_max, N2)
        delta = np.abs(cur.sum(0) - prev.sum(0)).max()
        N, prev = N2, cur
        if delta <= tol or N >= max_nodes:
            break
    return TransientKernel(float(t), k_max, prev.sum(0), prev, N)
