"""Curvature-corrected bubbles and the expanded H-system.

For an ambient metric written in normal coordinates at a base point and
rescaled by eps, a unit sphere ``w`` centred at ``p`` is corrected to
``w + p + eps^2 rho(w; p)``.  The correction cancels the eps^2 part of the
expanded equation, leaving an O(eps^3) residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bubble import (
    QuadratureError,
    RationalMap,
    SimpleBubble,
    omega,
    omega_jet,
    plane_integral,
)
from .curvature import CurvatureData, metric_expansion
from .grid import Field2D, ResidualReport, central_gradient, laplacian5

RHO_VARIANTS = ("consistent", "printed")


class NonUnitVector(ValueError):
    """rho was handed a point off the unit sphere."""


def rho(c: CurvatureData, p_shift, what, variant: str = "consistent") -> np.ndarray:
    """Second-order correction at unit vectors ``what`` (shape (..., 3)).

    ``variant="consistent"`` uses the Scal coefficient -1/12, which cancels the
    eps^2 residual; ``variant="printed"`` uses -1/4 and is kept for comparison.
    The remaining terms are shared:
    ``Ric w / 6 - (w.Ric.w) w / 12 - R_{kmnl} p^m p^n w^l / 6 - R_{kmnl} w^k p^m w^n / 3``
    (the last one with free index l).
    """
    if variant not in RHO_VARIANTS:
        raise ValueError(f"variant must be one of {RHO_VARIANTS}")
    w = np.asarray(what, dtype=float)
    p = np.asarray(p_shift, dtype=float).reshape(3)
    if np.abs(np.linalg.norm(w, axis=-1) - 1.0).max() > 1e-8:
        raise NonUnitVector("rho is defined on the unit sphere only")
    scal_coeff = -1.0 / 12.0 if variant == "consistent" else -0.25
    R, ric = c.riem, c.ric
    out = w @ ric.T / 6.0 + scal_coeff * c.scal * w
    out -= np.einsum("...k,kl,...l->...", w, ric, w)[..., None] * w / 12.0
    out -= np.einsum("kmnl,m,n,...l->...k", R, p, p, w) / 6.0
    out -= np.einsum("kmnl,...k,m,...n->...l", R, w, p, w) / 3.0
    return out


@dataclass(frozen=True, eq=False)
class CorrectedBubble:
    """``w + p + eps^2 rho(w; p)`` with ``w = rot . omega(chart coordinate)``.

    ``center_mass`` is the centre p of the base sphere; for a simple bubble
    it is the shift, and any other value is rejected so that eps = 0
    reproduces the base bubble exactly.
    """

    base: SimpleBubble
    curvature: CurvatureData
    eps: float
    center_mass: np.ndarray | None = None
    variant: str = "consistent"

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        cm = self.base.shift if self.center_mass is None else np.asarray(self.center_mass, float).reshape(3)
        if np.abs(cm - self.base.shift).max() > 1e-8:
            raise ValueError("center_mass of a simple bubble is its shift")
        object.__setattr__(self, "center_mass", self.base.shift)
        object.__setattr__(self, "eps", float(self.eps))


def eval_corrected(b: CorrectedBubble, z) -> np.ndarray:
    base = b.base
    w = omega(base.chart_coordinate(z)) @ base.rot.T
    out = w + b.center_mass
    if b.eps == 0.0:
        return out
    return out + b.eps**2 * rho(b.curvature, b.center_mass, w, b.variant)


def sample_corrected(b: CorrectedBubble, half_width: float, n: int, origin=(0.0, 0.0)) -> Field2D:
    return Field2D.from_function(lambda p: eval_corrected(b, p), half_width, n, origin)


def _wedge_and_gram(fx, fy):
    wedge = np.cross(fx, fy)
    gram = np.einsum("...i,...k->...ik", fx, fx) + np.einsum("...i,...k->...ik", fy, fy)
    return wedge, gram


def curvature_terms(c: CurvatureData, u, wedge, gram, order: int = 3):
    """The eps^2 and eps^3 coefficients subtracted in the expanded equation.

    ``gram[..., i, k] = <grad u^i, grad u^k>``.  The eps^2 block is written in
    the displayed index form; the eps^3 block comes from the cubic metric
    coefficients (B tensor, derivative of sqrt(det g) g^-1).
    """
    R, ric = c.riem, c.ric
    t2 = (2.0 / 3.0) * np.einsum("imnj,...m,...n,...i->...j", R, u, u, wedge)
    t2 += (1.0 / 3.0) * np.einsum("mn,...m,...n->...", ric, u, u)[..., None] * wedge
    t2 += (1.0 / 3.0) * np.einsum("nmij,...m,...in->...j", R + np.einsum("njim->nmij", R), u, gram)
    if order < 3:
        return t2, np.zeros_like(t2)
    dR = c.driem
    t3 = np.einsum("ijkmn,...m,...n,...ik->...j", c.B, u, u, gram)
    t3 += np.einsum("mnk,...m,...n,...k->...", c.dric, u, u, u)[..., None] * wedge / 6.0
    t3 += np.einsum("jkmin,...k,...m,...n,...i->...j", dR, u, u, u, wedge) / 3.0
    return t2, t3


def expanded_residual(f: Field2D, c: CurvatureData, eps: float, order: int = 3) -> ResidualReport:
    """Residual of the curvature-expanded H-system on interior nodes.

    ``-Lap_h f + 2 f_x ^ f_y - eps^2 T2(f) - eps^3 T3(f)``; ``order=2`` drops the
    cubic block.  Conformality defects are measured in the truncated metric
    ``g(eps f)``.
    """
    if f.is_scalar:
        raise ValueError("expanded_residual needs an R^3-valued field")
    if order not in (2, 3):
        raise ValueError("order must be 2 or 3")
    f.require()
    v = f.values
    fx, fy = central_gradient(v, f.h)
    u = v[1:-1, 1:-1]
    wedge, gram = _wedge_and_gram(fx, fy)
    res = -laplacian5(v, f.h) + 2.0 * wedge
    if eps != 0.0:
        t2, t3 = curvature_terms(c, u, wedge, gram, order)
        res = res - eps**2 * t2 - eps**3 * t3
    cm = c if order == 3 else c.with_driem(np.zeros((3, 3, 3, 3, 3)))
    g, _, _ = metric_expansion(cm, eps * u)
    gx = np.einsum("...ij,...j->...i", g, fx)
    gy = np.einsum("...ij,...j->...i", g, fy)
    return ResidualReport(
        res,
        f.h,
        {
            "conformal_xy": np.einsum("...i,...i->...", gx, fy),
            "conformal_diag": np.einsum("...i,...i->...", gx, fx) - np.einsum("...i,...i->...", gy, fy),
        },
    )


def center_of_mass(r, tol: float = 1e-11) -> np.ndarray:
    """Area-weighted mean of the image, weight |grad f|^2 / 2."""
    if isinstance(r, SimpleBubble):
        def dens(z):
            jet = omega_jet(z)
            return np.concatenate([jet.value * jet.grad_sq[..., None], jet.grad_sq[..., None]], -1)
        shift, rot = r.shift, r.rot
    elif isinstance(r, RationalMap):
        def dens(z):
            e = r.energy_density(z)[..., None]
            return np.concatenate([r.sphere_map(z) * e, e], -1)
        shift, rot = np.zeros(3), np.eye(3)
    else:
        raise TypeError("center_of_mass expects a SimpleBubble or RationalMap")
    total = plane_integral(dens, tol)
    if not total[3] > 0:
        raise QuadratureError("zero area")
    return rot @ (total[:3] / total[3]) + shift


__all__ = [
    "CorrectedBubble",
    "NonUnitVector",
    "RHO_VARIANTS",
    "center_of_mass",
    "curvature_terms",
    "eval_corrected",
    "expanded_residual",
    "rho",
    "sample_corrected",
]
