"""Poincare-ball geometry (curvature -1).

Points are rows of float64 arrays.  Every public function accepts either a
single point of shape ``(h,)`` or a batch of shape ``(n, h)``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

BALL_EPS = 1e-5
_COLINEAR_SIN = 1e-6


class BoundaryError(ValueError):
    """A point lies on or outside the open unit ball."""


def _check_inside(*ys: np.ndarray) -> None:
    for y in ys:
        sq = np.sum(np.asarray(y) ** 2, axis=-1)
        if np.any(sq >= 1.0) or not np.all(np.isfinite(sq)):
            raise BoundaryError("point on or outside the unit ball")


def poincare_dist(yi, yj) -> np.ndarray | float:
    """Geodesic distance ``arccosh(1 + 2|yi-yj|^2 / ((1-|yi|^2)(1-|yj|^2)))``."""
    yi = np.asarray(yi, dtype=np.float64)
    yj = np.asarray(yj, dtype=np.float64)
    _check_inside(yi, yj)
    diff = np.sum((yi - yj) ** 2, axis=-1)
    denom = (1.0 - np.sum(yi**2, axis=-1)) * (1.0 - np.sum(yj**2, axis=-1))
    arg = np.maximum(1.0 + 2.0 * diff / denom, 1.0)
    out = np.arccosh(arg)
    return float(out) if np.ndim(out) == 0 else out


def dist_to_origin(y) -> np.ndarray | float:
    y = np.asarray(y, dtype=np.float64)
    _check_inside(y)
    out = 2.0 * np.arctanh(np.sqrt(np.sum(y**2, axis=-1)))
    return float(out) if np.ndim(out) == 0 else out


def lca_depth_var(yi, yj) -> ad.Var:
    """Differentiable distance from the origin to the hyperbolic LCA.

    ``yi`` and ``yj`` are ``(n, h)`` Vars (or arrays).  The geodesic through
    two points lies in the plane spanned by them and the origin; it is the
    arc of the circle orthogonal to the unit sphere with centre ``c``
    solving ``c.y = (1+|y|^2)/2`` for both points.  The arc point nearest the
    origin sits on the ray through ``c`` at norm ``|c| - sqrt(|c|^2-1)``; if
    both points are on the same side of that ray the minimum over the segment
    is the endpoint with the smaller norm.
    """
    yi, yj = ad.as_var(yi), ad.as_var(yj)
    ni = (yi * yi).sum(axis=-1)
    nj = (yj * yj).sum(axis=-1)
    g = (yi * yj).sum(axis=-1)
    niv, njv, gv = ni.value, nj.value, g.value
    det = ni * nj - g * g
    prod = niv * njv
    with np.errstate(divide="ignore", invalid="ignore"):
        sin2 = np.where(prod > 0.0, det.value / np.where(prod > 0.0, prod, 1.0), 0.0)
    colinear = (prod <= 0.0) | (sin2 < _COLINEAR_SIN**2)

    tiny = 1e-300
    ni_safe = ad.where(niv > tiny, ni, tiny)
    nj_safe = ad.where(njv > tiny, nj, tiny)
    di = 2.0 * ad.atanh(ad.sqrt(ni_safe))
    dj = 2.0 * ad.atanh(ad.sqrt(nj_safe))
    endpoint = ad.where(niv <= njv, di, dj)

    det_safe = ad.where(colinear, 1.0, det)
    si = (1.0 + ni) * 0.5
    sj = (1.0 + nj) * 0.5
    # grouped so that swapping the two arguments gives bit-identical results
    c2 = (si * si * nj + sj * sj * ni - (si * sj) * g * 2.0) / det_safe
    c2 = ad.where(colinear, 2.0, c2)
    r2 = c2 - 1.0
    r2 = ad.where(r2.value > tiny, r2, tiny)
    t = 1.0 / (ad.sqrt(c2) + ad.sqrt(r2))
    interior_depth = 2.0 * ad.atanh(t)
    interior = gv * c2.value <= si.value * sj.value

    through_origin = colinear & (gv <= 0.0)
    general = ad.where(interior, interior_depth, endpoint)
    return ad.where(through_origin, 0.0, ad.where(colinear, endpoint, general))


def lca_depth(yi, yj) -> np.ndarray | float:
    """``d(o, yi v yj)``: origin distance of the closest point on the geodesic segment."""
    yi = np.asarray(yi, dtype=np.float64)
    yj = np.asarray(yj, dtype=np.float64)
    _check_inside(yi, yj)
    single = yi.ndim == 1 and yj.ndim == 1
    out = lca_depth_var(np.atleast_2d(yi), np.atleast_2d(yj)).value
    return float(out[0]) if single else out


def project_to_ball(y, eps: float = BALL_EPS) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    norm = np.linalg.norm(y, axis=-1, keepdims=True)
    limit = 1.0 - eps
    scale = np.where(norm > limit, limit / np.where(norm > 0, norm, 1.0), 1.0)
    out = y * scale
    # rounding can leave the rescaled norm an ulp above the limit; nudge it
    # inward so that projecting twice is a no-op
    for _ in range(8):
        over = np.linalg.norm(out, axis=-1, keepdims=True) > limit
        if not over.any():
            break
        out = np.where(over, out * (1.0 - 2.0**-52), out)
    return out


def riemannian_rescale(y, euclid_grad) -> np.ndarray:
    """Euclidean gradient times the inverse Poincare metric factor ``(1-|y|^2)^2/4``."""
    y = np.asarray(y, dtype=np.float64)
    _check_inside(y)
    sq = np.sum(y**2, axis=-1, keepdims=True)
    return np.asarray(euclid_grad) * ((1.0 - sq) ** 2 / 4.0)
