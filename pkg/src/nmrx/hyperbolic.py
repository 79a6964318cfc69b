"""Lorentz-model hyperbolic geometry and the hard-case contrastive objective."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (CurvatureMismatch, EmptyNegatives, InvalidPoint, InvariantViolation,
                     NonpositiveCurvature, ShapeMismatch)

CLAMP = 1e-9


@dataclass(frozen=True, eq=False)
class LorentzPoint:
    coords: np.ndarray
    curvature_kappa: float = 1.0

    def __post_init__(self):
        if not self.curvature_kappa > 0:
            raise NonpositiveCurvature("curvature must be positive")
        x = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", x)
        if x.ndim != 1 or len(x) < 2 or not np.all(np.isfinite(x)):
            raise InvalidPoint("coordinates must be a finite vector of length >= 2")
        if not x[0] > 0:
            raise InvalidPoint("x0 must be positive")
        # relative tolerance: at x0 ~ 1e6 the squares alone carry ~1e-4 of rounding
        k = self.curvature_kappa
        if abs(lorentz_inner(x, x) + k) > 1e-9 * max(k, x[0] * x[0]):
            raise InvalidPoint("point is not on the hyperboloid <x,x>_L = -kappa")


def lorentz_inner(x: np.ndarray, y: np.ndarray) -> float:
    """<x, y>_L = -x0 y0 + sum_j x_j y_j."""
    return float(-x[0] * y[0] + np.dot(x[1:], y[1:]))


def origin(dim: int, kappa: float = 1.0) -> LorentzPoint:
    o = np.zeros(dim + 1)
    o[0] = math.sqrt(kappa)
    return LorentzPoint(o, kappa)


def lorentz_exp(v, kappa: float = 1.0) -> LorentzPoint:
    """Exponential map at the origin of the hyperboloid <x,x>_L = -kappa."""
    if not kappa > 0:
        raise NonpositiveCurvature("curvature must be positive")
    v = np.asarray(v, dtype=float)
    r = float(np.linalg.norm(v))
    sk = math.sqrt(kappa)
    if r == 0:
        return origin(len(v), kappa)
    a = r / sk
    return LorentzPoint(np.concatenate([[sk * math.cosh(a)], sk * math.sinh(a) * v / r]), kappa)


def _arcosh_arg(x: LorentzPoint, y: LorentzPoint) -> float:
    """Return t = -<x,y>_L / kappa - 1, computed as <x-y, x-y>_L / (2 kappa).

    The difference form is exact for identical points and keeps relative
    precision for close ones, where the plain inner product cancels.
    """
    if x.curvature_kappa != y.curvature_kappa:
        raise CurvatureMismatch(f"{x.curvature_kappa} vs {y.curvature_kappa}")
    if len(x.coords) != len(y.coords):
        raise InvalidPoint("points live in different dimensions")
    d = x.coords - y.coords
    t = lorentz_inner(d, d) / (2 * x.curvature_kappa)
    if t < -CLAMP:
        raise InvalidPoint(f"arcosh argument {1 + t!r} below 1; points are not on the hyperboloid")
    return max(t, 0.0)


def _acosh1p(t: float) -> float:
    """arcosh(1 + t) without cancellation for small t."""
    return math.log1p(t + math.sqrt(t * (t + 2.0)))


def lorentz_distance(x: LorentzPoint, y: LorentzPoint) -> float:
    """Geodesic distance sqrt(kappa) * arcosh(-<x,y>_L / kappa)."""
    return math.sqrt(x.curvature_kappa) * _acosh1p(_arcosh_arg(x, y))


def normalize_projection(z) -> np.ndarray:
    """Mean-zero, unit-variance rescaling of one vector (a constant vector maps to zeros)."""
    z = np.asarray(z, dtype=float)
    c = z - z.mean()
    sd = math.sqrt(float(np.mean(c * c)))
    return c / sd if sd > 0 else np.zeros_like(z)


def hard_case_score(spectrum_vec, candidate_vec, kappa: float = 1.0) -> float:
    """Negative geodesic distance between the embedded, normalised vectors (<= 0)."""
    a = np.asarray(spectrum_vec, dtype=float)
    b = np.asarray(candidate_vec, dtype=float)
    if a.shape != b.shape:
        raise ShapeMismatch("embedding dimensions differ")
    return -tangent_distance(normalize_projection(a), normalize_projection(b), kappa)


def tangent_distance(v, w, kappa: float = 1.0) -> float:
    """d(exp(v), exp(w)) evaluated from the tangent vectors.

    Uses -<x,y>/kappa - 1 = 2 sinh^2((a-b)/2) + sinh(a) sinh(b) |v^ - w^|^2 / 2
    with a = |v|/sqrt(kappa), b = |w|/sqrt(kappa); every term is non-negative,
    so long vectors lose no precision.
    """
    if not kappa > 0:
        raise NonpositiveCurvature("curvature must be positive")
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    sk = math.sqrt(kappa)
    rv, rw = float(np.linalg.norm(v)), float(np.linalg.norm(w))
    a, b = rv / sk, rw / sk
    t = 2.0 * math.sinh((a - b) / 2) ** 2
    if rv > 0 and rw > 0:
        t += math.sinh(a) * math.sinh(b) * float(np.sum((v / rv - w / rw) ** 2)) / 2
    return sk * _acosh1p(t)


# --- gradients ----------------------------------------------------------------

def _exp_vjp(v: np.ndarray, g: np.ndarray, kappa: float) -> np.ndarray:
    """g^T d exp(v)/dv for the ambient coordinates."""
    sk = math.sqrt(kappa)
    r = float(np.linalg.norm(v))
    if r < 1e-12:
        return g[1:].copy()  # d exp at 0 is the identity onto the spatial part
    a = r / sk
    u = v / r
    g0, gs = g[0], g[1:]
    f = sk * math.sinh(a) / r
    fp = (math.cosh(a) * r - sk * math.sinh(a)) / (r * r)
    return g0 * math.sinh(a) * u + f * gs + fp * float(np.dot(gs, v)) * u


def _norm_vjp(z: np.ndarray, g: np.ndarray) -> np.ndarray:
    c = z - z.mean()
    sd = math.sqrt(float(np.mean(c * c)))
    if sd == 0:
        return np.zeros_like(z)
    zt = c / sd
    return (g - g.mean() - zt * float(np.mean(g * zt))) / sd


def _score_and_grads(zs, zm, kappa):
    """s = -d(exp(n(zs)), exp(n(zm))) and ds/dzs, ds/dzm."""
    vs, vm = normalize_projection(zs), normalize_projection(zm)
    x, y = lorentz_exp(vs, kappa), lorentz_exp(vm, kappa)
    sk = math.sqrt(kappa)
    t = _arcosh_arg(x, y)
    s = -sk * _acosh1p(t)
    if t <= 0.0:
        return s, np.zeros_like(zs), np.zeros_like(zm)
    ds_du = -sk / math.sqrt(t * (t + 2.0))
    # u = -<x,y>_L / kappa  =>  du/dx = (y0, -y_s) / kappa
    gx = ds_du * np.concatenate([[y.coords[0]], -y.coords[1:]]) / kappa
    gy = ds_du * np.concatenate([[x.coords[0]], -x.coords[1:]]) / kappa
    return s, _norm_vjp(zs, _exp_vjp(vs, gx, kappa)), _norm_vjp(zm, _exp_vjp(vm, gy, kappa))


@dataclass(frozen=True)
class HardCaseBatch:
    spectrum_embedding: np.ndarray
    positive_embedding: np.ndarray
    negative_embeddings: tuple
    eta: float = 0.1
    margin_m: float = 0.5
    lambda_rank: float = 1.0
    lambda_reg: float = 0.0

    def __post_init__(self):
        d = len(np.asarray(self.spectrum_embedding))
        if len(np.asarray(self.positive_embedding)) != d or any(len(np.asarray(n)) != d
                                                                 for n in self.negative_embeddings):
            raise ShapeMismatch("all embeddings must share one dimension")
        if not (self.eta > 0 and self.margin_m > 0 and self.lambda_rank >= 0 and self.lambda_reg >= 0):
            raise InvariantViolation("eta and margin must be positive, lambdas non-negative")


def hard_case_loss(batch: HardCaseBatch, kappa: float = 1.0, with_grad: bool = False):
    """Contrastive, margin-ranking and regularisation terms of the hard-case objective.

    con  = -log softmax of s+ against s- at temperature eta,
    rank = sum_k max(0, m - s+ + s-_k),
    reg  = sum of squared norms of the normalised projections,
    total = con + lambda_rank * rank + lambda_reg * reg.

    With ``with_grad`` a second dict holds gradients with respect to the raw
    embeddings (keys ``spectrum``, ``positive``, ``negatives``).
    """
    negs = [np.asarray(n, dtype=float) for n in batch.negative_embeddings]
    if not negs:
        raise EmptyNegatives("hard-case loss needs at least one negative")
    zs = np.asarray(batch.spectrum_embedding, dtype=float)
    zp = np.asarray(batch.positive_embedding, dtype=float)
    sp, gsp_s, gsp_p = _score_and_grads(zs, zp, kappa)
    sn, gsn_s, gsn_n = [], [], []
    for zn in negs:
        s, a, b = _score_and_grads(zs, zn, kappa)
        sn.append(s)
        gsn_s.append(a)
        gsn_n.append(b)
    logits = np.array([sp] + sn) / batch.eta
    mx = float(logits.max())
    lse = mx + math.log(float(np.exp(logits - mx).sum()))
    con = lse - logits[0]
    hinge = [batch.margin_m - sp + s for s in sn]
    rank = float(sum(max(0.0, h) for h in hinge))
    projections = [zs, zp] + negs
    reg = float(sum(np.sum(normalize_projection(z) ** 2) for z in projections))
    total = con + batch.lambda_rank * rank + batch.lambda_reg * reg
    out = {"total": float(total), "con": float(con), "rank": rank, "reg": reg}
    if not with_grad:
        return out
    p = np.exp(logits - lse)  # softmax
    dcon_dsp = (p[0] - 1.0) / batch.eta
    dcon_dsn = p[1:] / batch.eta
    active = np.array([h > 0 for h in hinge], dtype=float)
    dsp = dcon_dsp - batch.lambda_rank * active.sum()
    dsn = dcon_dsn + batch.lambda_rank * active
    g_s = dsp * gsp_s + sum(w * g for w, g in zip(dsn, gsn_s))
    g_p = dsp * gsp_p
    g_n = [w * g for w, g in zip(dsn, gsn_n)]
    # reg gradient: d/dz |n(z)|^2 through the normalisation
    for k, z in enumerate(projections):
        gz = _norm_vjp(z, 2.0 * normalize_projection(z)) * batch.lambda_reg
        if k == 0:
            g_s = g_s + gz
        elif k == 1:
            g_p = g_p + gz
        else:
            g_n[k - 2] = g_n[k - 2] + gz
    return out, {"spectrum": g_s, "positive": g_p, "negatives": g_n}


def train_embeddings(batch: HardCaseBatch, kappa: float = 1.0, lr: float = 0.05,
                     steps: int = 100) -> tuple[HardCaseBatch, list[float]]:
    """Plain gradient descent on all embeddings of one batch; returns the batch and loss history."""
    history = []
    b = batch
    for _ in range(steps):
        val, g = hard_case_loss(b, kappa, with_grad=True)
        history.append(val["total"])
        b = HardCaseBatch(b.spectrum_embedding - lr * g["spectrum"], b.positive_embedding - lr * g["positive"],
                          tuple(n - lr * gn for n, gn in zip(b.negative_embeddings, g["negatives"])),
                          b.eta, b.margin_m, b.lambda_rank, b.lambda_reg)
    history.append(hard_case_loss(b, kappa)["total"])
    return b, history


def spectrum_consistency(candidate, observations, kappa: float = 1.0) -> float:
    """Hard-case score between observed and simulated spectrum vectors, averaged over nuclei."""
    from .match import spectrum_vector
    from .molecule import signals_from_annotated, simulate_spectrum
    from .peaks import AnnotatedSpectrum

    obs = [observations] if isinstance(observations, AnnotatedSpectrum) else list(observations)
    vals = []
    for a in obs:
        observed = signals_from_annotated(a)
        sim = simulate_spectrum(candidate, observed.nucleus)
        vals.append(hard_case_score(spectrum_vector(observed).bins, spectrum_vector(sim).bins, kappa))
    return float(np.mean(vals))
