"""Sphere integrals that turn the cubic curvature source into a force.

The cubic part of the expanded H-system evaluated on the unit sphere gives a
vector field ``C(y)`` on S^2 that is linear in the covariant derivative of the
curvature.  Pairing ``C`` with the kernel fields ``Y^l`` (pushforwards of the
chart generators ``omega_x``, ``omega_y`` and ``x omega_x + y omega_y``) or with
the constant translations ``e_l`` yields a vector in R^3.  Every such pairing
is an O(3)-equivariant linear function of ``driem``; in three dimensions it is
therefore a combination ``alpha * divRic + beta * dScal`` whose coefficients
are found here by contracting exact sphere moments, not by hand algebra.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .corrected import NonUnitVector
from .curvature import CurvatureData

FOUR_PI = 4.0 * math.pi


# -- quadrature -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SphereQuadrature:
    """Nodes on S^2 and positive weights summing to 4 pi."""

    nodes: np.ndarray
    weights: np.ndarray
    degree: int

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 2 or nodes.shape[1] != 3 or weights.shape != (nodes.shape[0],):
            raise ValueError("nodes must be (m, 3) and weights (m,)")
        if np.abs(np.linalg.norm(nodes, axis=1) - 1.0).max() > 1e-12:
            raise ValueError("quadrature nodes must be unit vectors")
        if weights.min() <= 0 or abs(weights.sum() - FOUR_PI) > 1e-10:
            raise ValueError("weights must be positive and sum to 4 pi")
        if self.degree < 6:
            raise ValueError("degree-6 exactness is required")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def product(cls, degree: int = 11) -> "SphereQuadrature":
        """Gauss-Legendre in cos(theta) times a uniform azimuthal rule.

        Exact for every polynomial of total degree <= ``degree``.
        """
        nt = degree // 2 + 1
        nphi = degree + 1
        t, wt = np.polynomial.legendre.leggauss(nt)
        phi = (np.arange(nphi) + 0.5) * 2.0 * math.pi / nphi
        T, P = np.meshgrid(t, phi, indexing="ij")
        s = np.sqrt(1.0 - T**2)
        nodes = np.stack([s * np.cos(P), s * np.sin(P), T], -1).reshape(-1, 3)
        weights = (wt[:, None] * np.full(nphi, 2.0 * math.pi / nphi)[None, :]).ravel()
        return cls(nodes, weights, degree)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Sum over the leading (node) axis."""
        return np.tensordot(self.weights, values, axes=(0, 0))

    def moment(self, order: int) -> np.ndarray:
        if order > self.degree:
            raise ValueError(f"rule of degree {self.degree} cannot integrate order {order}")
        y = self.nodes
        out = self.weights
        subs = "abcdefgh"[:order]
        ops = [out] + [y] * order
        spec = "z," + ",".join("z" + s for s in subs) + "->" + subs
        return np.einsum(spec, *ops)


def _pairings(idx: tuple[int, ...]):
    if not idx:
        yield ()
        return
    first, rest = idx[0], idx[1:]
    for k in range(len(rest)):
        for tail in _pairings(rest[:k] + rest[k + 1:]):
            yield ((first, rest[k]),) + tail


@lru_cache(maxsize=None)
def exact_moment(order: int) -> np.ndarray:
    """``int_{S^2} y^{i1} ... y^{i_order}``: 4 pi / (order+1)!! times the sum over pairings."""
    if order % 2:
        return np.zeros((3,) * order)
    if order == 0:
        return np.array(FOUR_PI)
    dfact = math.prod(range(order + 1, 0, -2))
    out = np.zeros((3,) * order)
    for multi in itertools.product(range(3), repeat=order):
        count = sum(all(multi[a] == multi[b] for a, b in p) for p in _pairings(tuple(range(order))))
        out[multi] = count
    out *= FOUR_PI / dfact
    out.setflags(write=False)
    return out


def sphere_moments(q: SphereQuadrature) -> tuple[np.ndarray, np.ndarray]:
    """Second and fourth moments of the rule."""
    return q.moment(2), q.moment(4)


def moment_certificate(q: SphereQuadrature, max_order: int = 6) -> float:
    """Largest deviation of the rule's moments from the exact ones up to ``max_order``."""
    return max(float(np.abs(q.moment(k) - exact_moment(k)).max()) for k in range(1, max_order + 1))


# -- kernel fields ----------------------------------------------------------------------

def kernel_fields(y) -> np.ndarray:
    """Pushforwards of omega_x, omega_y and the dilation generator, shape (..., 3, 3).

    ``out[..., l, :]`` is Y^{l+1}(y).
    """
    y = np.asarray(y, dtype=float)
    if np.abs(np.linalg.norm(y, axis=-1) - 1.0).max() > 1e-10:
        raise NonUnitVector("kernel fields are defined on the unit sphere")
    y1, y2, y3 = y[..., 0], y[..., 1], y[..., 2]
    z = np.zeros_like(y1)
    e = np.eye(3)
    Y1 = e[0] + np.stack([-y3, z, y1], -1) - y1[..., None] * y
    Y2 = e[1] + np.stack([z, -y3, y2], -1) - y2[..., None] * y
    Y3 = e[2] - y3[..., None] * y
    return np.stack([Y1, Y2, Y3], -2)


# -- the balancing integral ---------------------------------------------------------------

def _integrand_tensor(driem: np.ndarray) -> np.ndarray:
    """``T[i,k,j,m,n] = 4 R_{kmij,n} + 2 R_{imnj,k} - R_{imnk,j}``."""
    return (4.0 * np.einsum("kmijn->ikjmn", driem)
            + 2.0 * np.einsum("imnjk->ikjmn", driem)
            - np.einsum("imnkj->ikjmn", driem))


def balancing_integral(c: CurvatureData, q: SphereQuadrature | None = None) -> np.ndarray:
    """Quadrature of ``T_{ikjmn} y^m y^n P^{ik} P^{jl}`` with ``P = I - y y^T``."""
    q = q or SphereQuadrature.product()
    y = q.nodes
    P = np.eye(3) - np.einsum("ai,ak->aik", y, y)
    vals = np.einsum("ikjmn,am,an,aik,ajl->al", _integrand_tensor(c.driem), y, y, P, P)
    return q.integrate(vals)


def _balancing_contracted(driem: np.ndarray) -> np.ndarray:
    T = _integrand_tensor(driem)
    d = np.eye(3)
    M2, M4, M6 = exact_moment(2), exact_moment(4), exact_moment(6)
    out = np.einsum("ikjmn,ik,jl,mn->l", T, d, d, M2)
    out -= np.einsum("ikjmn,ik,mnjl->l", T, d, M4)
    out -= np.einsum("ikjmn,jl,mnik->l", T, d, M4)
    out += np.einsum("ikjmn,mnikjl->l", T, M6)
    return out


# -- the pre-reduction source --------------------------------------------------------------

def cubic_source(c: CurvatureData, y, p_shift=None) -> np.ndarray:
    """Cubic curvature source ``C(y)`` of the expanded system on the sphere ``y + p``.

    With ``u = y + p`` and ``P = I - y y^T`` (the Gram matrix of the unit bubble
    divided by the conformal factor) the field is
    ``B_{ijkmn} u^m u^n P^{ik} - dric_{mnk} u^m u^n u^k y^j / 6 - R_{jkmi,n} u^k u^m u^n y^i / 3``.
    """
    y = np.asarray(y, dtype=float)
    p = np.zeros(3) if p_shift is None else np.asarray(p_shift, dtype=float).reshape(3)
    u = y + p
    P = np.eye(3) - np.einsum("...i,...k->...ik", y, y)
    out = np.einsum("ijkmn,...m,...n,...ik->...j", c.B, u, u, P)
    out -= np.einsum("mnk,...m,...n,...k->...", c.dric, u, u, u)[..., None] * y / 6.0
    out -= np.einsum("jkmin,...k,...m,...n,...i->...j", c.driem, u, u, u, y) / 3.0
    return out


def source_projection(c: CurvatureData, q: SphereQuadrature | None = None, p_shift=None,
                      fields: str = "kernel") -> np.ndarray:
    """``int C . Y^l`` (``fields="kernel"``) or ``int C . e_l`` (``"translation"``)."""
    q = q or SphereQuadrature.product()
    C = cubic_source(c, q.nodes, p_shift)
    if fields == "kernel":
        return q.integrate(np.einsum("aj,alj->al", C, kernel_fields(q.nodes)))
    if fields == "translation":
        return q.integrate(C)
    raise ValueError("fields must be 'kernel' or 'translation'")


def _translation_contracted(c: CurvatureData) -> np.ndarray:
    d = np.eye(3)
    M2, M4 = exact_moment(2), exact_moment(4)
    out = np.einsum("ijkmn,ik,mn->j", c.B, d, M2) - np.einsum("ijkmn,mnik->j", c.B, M4)
    out -= np.einsum("mnk,mnkj->j", c.dric, M4) / 6.0
    out -= np.einsum("jkmin,kmni->j", c.driem, M4) / 3.0
    return out


# -- trace coefficients -------------------------------------------------------------------

@dataclass(frozen=True)
class TraceCoefficients:
    """``F(driem) = alpha * divRic + beta * dScal`` on three-dimensional curvature data.

    ``c0 = alpha + 2 beta`` is the coefficient of divRic once the contracted
    second Bianchi identity ``dScal = 2 divRic`` is imposed; the force along
    ``dScal`` is then ``(c0 / 2) dScal``.
    """

    alpha: float
    beta: float
    fit_residual: float
    note: str

    @property
    def c0(self) -> float:
        return self.alpha + 2.0 * self.beta


def _dric_basis() -> list[np.ndarray]:
    basis = []
    for m in range(3):
        for l in range(m, 3):
            for p in range(3):
                E = np.zeros((3, 3, 3))
                E[m, l, p] = E[l, m, p] = 1.0
                basis.append(E)
    return basis


def _trace_fit(linear_map, note: str) -> TraceCoefficients:
    """Fit ``linear_map(c) = alpha divRic + beta dScal`` over all symmetric dric."""
    rows, rhs = [], []
    for E in _dric_basis():
        div = np.einsum("mlm->l", E)
        ds = np.einsum("mml->l", E)
        rows.append(np.stack([div, ds], 1))
        rhs.append(linear_map(CurvatureData.from_ricci(np.zeros((3, 3)), E, synthetic=True)))
    A = np.concatenate(rows)
    b = np.concatenate(rhs)
    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = float(np.abs(A @ coef - b).max())
    return TraceCoefficients(float(coef[0]), float(coef[1]), resid, note)


@lru_cache(maxsize=None)
def balancing_constant() -> TraceCoefficients:
    """Trace coefficients of the displayed balancing integral, by exact moment contraction."""
    return _trace_fit(
        lambda c: _balancing_contracted(c.driem),
        "contraction of T_{ikjmn} against the degree-2, 4 and 6 sphere moments; "
        "alpha and beta fitted over the 18-dimensional space of symmetric dric",
    )


@lru_cache(maxsize=None)
def translation_constant() -> TraceCoefficients:
    """Trace coefficients of the translation pairing of the cubic source at p = 0."""
    return _trace_fit(
        _translation_contracted,
        "contraction of the cubic source against the degree-2 and 4 sphere moments; "
        "alpha and beta fitted over the 18-dimensional space of symmetric dric",
    )


def balancing_closed_form(c: CurvatureData) -> np.ndarray:
    """``alpha divRic + beta dScal`` with the contracted trace coefficients."""
    k = balancing_constant()
    return k.alpha * c.divric + k.beta * c.dscal


def balancing_contracted(c: CurvatureData) -> np.ndarray:
    """The balancing integral evaluated by exact moment contraction (no quadrature)."""
    return _balancing_contracted(c.driem)


def translation_closed_form(c: CurvatureData) -> np.ndarray:
    k = translation_constant()
    return k.alpha * c.divric + k.beta * c.dscal


def translation_contracted(c: CurvatureData) -> np.ndarray:
    return _translation_contracted(c)


def odd_moment_defect(q: SphereQuadrature) -> float:
    """Largest odd moment (orders 1, 3, 5) of the rule; zero for an exact rule."""
    return max(float(np.abs(q.moment(k)).max()) for k in (1, 3, 5))


__all__ = [
    "SphereQuadrature",
    "TraceCoefficients",
    "balancing_closed_form",
    "balancing_constant",
    "balancing_contracted",
    "balancing_integral",
    "cubic_source",
    "exact_moment",
    "kernel_fields",
    "moment_certificate",
    "odd_moment_defect",
    "sphere_moments",
    "source_projection",
    "translation_closed_form",
    "translation_constant",
    "translation_contracted",
]
