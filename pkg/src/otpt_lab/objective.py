"""Test-time losses and their gradients with respect to the prompt context.

The gradient is written out by hand for the exact graph used here::

    context -> pooled tokens -> tanh layer -> linear -> row normalize -> E
    E -> Gram penalty / dispersion
    E, view features -> logits -> softmax -> mean over confident views -> entropy

Two pieces are held fixed while differentiating: which views count as
confident, and the orthonormal target of the Householder variant.  Both are
stored in :class:`Frozen` so that finite differences can reuse them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OtptLabError
from .linalg import gram_matrix, householder_qr
from .model import ClassEmbeddings, EncoderParams, PromptState, encode_images, softmax, text_forward

METHODS = ("tpt", "ctpt", "otpt", "otpt_hh", "otpt_ctpt")
_USES_ORTHO = {"otpt", "otpt_hh", "otpt_ctpt"}
_USES_ATFD = {"ctpt", "otpt_ctpt"}
PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class ViewBatch:
    probs: np.ndarray
    entropies: np.ndarray

    @classmethod
    def from_probs(cls, probs) -> "ViewBatch":
        probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
        return cls(probs, np.array([entropy(p) for p in probs]))


@dataclass(frozen=True)
class LossBreakdown:
    l_tpt: float = 0.0
    l_ortho: float = 0.0
    l_atfd: float = 0.0
    total: float = 0.0
    lambda_ortho: float = 0.0
    lambda_atfd: float = 0.0


@dataclass(frozen=True)
class Frozen:
    selected: np.ndarray
    target: np.ndarray | None = None


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    return float(-np.sum(p * np.log(np.maximum(p, PROB_FLOOR))))


def n_selected(n_views: int, rho: float) -> int:
    # guard against 0.1 * 30 == 3.0000000000000004
    return min(n_views, max(1, math.ceil(rho * n_views - 1e-9)))


def select_confident(views: ViewBatch, rho: float) -> np.ndarray:
    """Indices of the ceil(rho*B) lowest-entropy views, lower index wins ties."""
    k = n_selected(len(views.entropies), rho)
    return np.sort(np.argsort(views.entropies, kind="stable")[:k])


def tpt_loss(views: ViewBatch, rho: float, selected=None) -> float:
    if selected is None:
        selected = select_confident(views, rho)
    return entropy(views.probs[selected].mean(axis=0))


def ortho_loss(E) -> float:
    E = np.asarray(E, dtype=np.float64)
    R = gram_matrix(E) - np.eye(E.shape[0])
    return float(np.sum(R * R))


def orthonormal_target(E) -> np.ndarray:
    """Orthonormal rows spanning the row space of E, from Householder QR of E^T."""
    Q, _ = householder_qr(np.asarray(E, dtype=np.float64).T)
    return Q.T


def householder_ortho_loss(E, target=None) -> float:
    E = np.asarray(E, dtype=np.float64)
    if target is None:
        target = orthonormal_target(E)
    d = E - target
    return float(np.sum(d * d))


def atfd(E) -> float:
    E = np.asarray(E, dtype=np.float64)
    centroid = E.mean(axis=0)
    return float(np.mean(np.linalg.norm(E - centroid, axis=1)))


def _check_method(method: str) -> None:
    if method not in METHODS:
        raise OtptLabError(f"unknown method {method!r}; expected one of {METHODS}")


def _lambdas(method: str, cfg) -> tuple[float, float]:
    lo = float(cfg.lambda_ortho) if method in _USES_ORTHO else 0.0
    la = float(cfg.lambda_atfd) if method in _USES_ATFD else 0.0
    return lo, la


def total_objective(method: str, E, views: ViewBatch, cfg, frozen: Frozen | None = None) -> LossBreakdown:
    _check_method(method)
    lo, la = _lambdas(method, cfg)
    selected = frozen.selected if frozen is not None else None
    l_tpt = tpt_loss(views, cfg.rho, selected)
    total = l_tpt
    l_ortho = l_atfd = 0.0
    if lo:
        if method == "otpt_hh":
            l_ortho = householder_ortho_loss(E, None if frozen is None else frozen.target)
        else:
            l_ortho = ortho_loss(E)
        total = total + lo * l_ortho
    if la:
        l_atfd = atfd(E)
        total = total - la * l_atfd
    return LossBreakdown(l_tpt, l_ortho, l_atfd, total, lo, la)


# ---------------------------------------------------------------------------
# gradients


def _grad_entropy_of_mean(P_sel: np.ndarray) -> np.ndarray:
    """d entropy(mean rows) / d P_sel for each selected probability row."""
    pbar = P_sel.mean(axis=0)
    g = -(np.log(np.maximum(pbar, PROB_FLOOR)) + 1.0)
    return np.broadcast_to(g / P_sel.shape[0], P_sel.shape)


def _grad_softmax(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    return P * (dP - np.sum(dP * P, axis=1, keepdims=True))


def _grad_ortho(E: np.ndarray) -> np.ndarray:
    return 4.0 * (gram_matrix(E) - np.eye(E.shape[0])) @ E


def _grad_atfd(E: np.ndarray) -> np.ndarray:
    C = E.shape[0]
    diff = E - E.mean(axis=0)
    r = np.linalg.norm(diff, axis=1, keepdims=True)
    unit = np.divide(diff, r, out=np.zeros_like(diff), where=r > 0)
    return (unit - unit.mean(axis=0)) / C


def _backprop_text(params: EncoderParams, fwd, dE: np.ndarray, n_ctx: int) -> np.ndarray:
    E, y = fwd.E, fwd.y
    norms = np.linalg.norm(y, axis=1, keepdims=True)
    dy = (dE - E * np.sum(dE * E, axis=1, keepdims=True)) / norms
    dz = (dy @ params.W_T) * (1.0 - fwd.h * fwd.h)
    du = dz @ params.A_T
    dctx_row = du.sum(axis=0) / (n_ctx + 1)
    return np.tile(dctx_row, (n_ctx, 1))


def view_features(params: EncoderParams, views_input) -> np.ndarray:
    return encode_images(params, np.atleast_2d(views_input))


def freeze(method: str, params, classes, context, V, cfg) -> Frozen:
    """Choose the confident views (and Householder target) at ``context``."""
    fwd = text_forward(params, classes, context)
    probs = softmax(params.logit_scale * (V @ fwd.E.T))
    selected = select_confident(ViewBatch.from_probs(probs), cfg.rho)
    target = None
    if method == "otpt_hh" and _lambdas(method, cfg)[0]:
        target = orthonormal_target(fwd.E)
    return Frozen(selected, target)


def evaluate(method: str, params: EncoderParams, classes: ClassEmbeddings, context: np.ndarray,
             V: np.ndarray, cfg, frozen: Frozen | None = None,
             with_grad: bool = True) -> tuple[LossBreakdown, np.ndarray | None, Frozen]:
    """Objective value (and gradient w.r.t. context) for precomputed view features V."""
    _check_method(method)
    context = np.asarray(context, dtype=np.float64)
    fwd = text_forward(params, classes, context)
    E = fwd.E
    s = params.logit_scale
    probs = softmax(s * (V @ E.T))
    views = ViewBatch.from_probs(probs)
    if frozen is None:
        selected = select_confident(views, cfg.rho)
        target = None
        if method == "otpt_hh" and _lambdas(method, cfg)[0]:
            target = orthonormal_target(E)
        frozen = Frozen(selected, target)
    breakdown = total_objective(method, E, views, cfg, frozen)
    if not with_grad:
        return breakdown, None, frozen

    lo, la = _lambdas(method, cfg)
    sel = frozen.selected
    dP = _grad_entropy_of_mean(probs[sel])
    dS = _grad_softmax(probs[sel], dP)
    dE = s * (dS.T @ V[sel])
    if lo:
        if method == "otpt_hh":
            dE = dE + lo * 2.0 * (E - frozen.target)
        else:
            dE = dE + lo * _grad_ortho(E)
    if la:
        dE = dE - la * _grad_atfd(E)
    return breakdown, _backprop_text(params, fwd, dE, context.shape[0]), frozen


def grad_objective(method: str, params: EncoderParams, classes: ClassEmbeddings, prompt: PromptState,
                   views_input, cfg, frozen: Frozen | None = None) -> np.ndarray:
    V = view_features(params, views_input)
    return evaluate(method, params, classes, prompt.context, V, cfg, frozen)[1]


def finite_diff_grad(func: Callable[[np.ndarray], float], theta, step: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function, one entry at a time."""
    if not step > 0:
        raise ValueError("step must be positive")
    theta = np.array(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat, gflat = theta.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = func(theta)
        flat[i] = orig - step
        fm = func(theta)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def finite_diff_objective(method: str, params: EncoderParams, classes: ClassEmbeddings, prompt: PromptState,
                          views_input, cfg, step: float = 1e-6, frozen: Frozen | None = None) -> np.ndarray:
    """Finite-difference counterpart of :func:`grad_objective` with the same frozen choices."""
    V = view_features(params, views_input)
    if frozen is None:
        frozen = freeze(method, params, classes, prompt.context, V, cfg)

    def f(ctx):
        return evaluate(method, params, classes, ctx, V, cfg, frozen, with_grad=False)[0].total

    return finite_diff_grad(f, prompt.context, step)
