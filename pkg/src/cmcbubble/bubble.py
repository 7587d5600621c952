"""Round-sphere solutions of the flat H-system and their rational-map relatives.

Sign convention used throughout the package: residuals are written with the
positive Laplacian, so for a map f of the plane the H-bubble equation reads
``-(f_xx + f_yy) + 2 f_x ^ f_y = 0``.  The inverse stereographic projection
``omega`` satisfies it with ``omega_x ^ omega_y = -4 omega / (1 + r^2)^2``;
at the origin this cross product is ``(0, 0, 4)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import integrate

from .grid import Field2D, GridTooSmall, ResidualReport, central_gradient, laplacian5

GRADIENT_BOUND = 2.0 * np.sqrt(2.0)  # sup |grad omega|, attained at the origin


class QuadratureError(RuntimeError):
    """The adaptive quadrature could not meet the requested tolerance."""


class ReducibleMap(ValueError):
    """P and Q share a root (to resultant tolerance)."""


def as_points(z) -> np.ndarray:
    """Accept complex numbers or (..., 2) real arrays; return (..., 2) floats."""
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return np.stack([z.real, z.imag], axis=-1).astype(float)
    z = z.astype(float)
    if z.shape[-1:] != (2,):
        raise ValueError(f"points must have a trailing axis of length 2, got {z.shape}")
    return z


def omega(z) -> np.ndarray:
    """Inverse stereographic projection (2x, 2y, r^2 - 1) / (1 + r^2)."""
    p = as_points(z)
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    d = 1.0 + r2
    return np.stack([2 * x / d, 2 * y / d, (r2 - 1.0) / d], axis=-1)


class OmegaJet(NamedTuple):
    value: np.ndarray
    wx: np.ndarray
    wy: np.ndarray
    cross: np.ndarray
    grad_sq: np.ndarray


def omega_jet(z) -> OmegaJet:
    """Value, first derivatives, their cross product and |grad omega|^2."""
    p = as_points(z)
    x, y = p[..., 0], p[..., 1]
    r2 = x * x + y * y
    d = 1.0 + r2
    d2 = d * d
    value = np.stack([2 * x / d, 2 * y / d, (r2 - 1.0) / d], axis=-1)
    wx = np.stack([2 * (1 - x * x + y * y), -4 * x * y, 4 * x], axis=-1) / d2[..., None]
    wy = np.stack([-4 * x * y, 2 * (1 + x * x - y * y), 4 * y], axis=-1) / d2[..., None]
    return OmegaJet(value, wx, wy, np.cross(wx, wy), 8.0 / d2)


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class SimpleBubble:
    """Degree-one bubble ``rot . omega(e^{-i theta}(z - a)/lam) + shift``."""

    a: np.ndarray = field(default_factory=lambda: np.zeros(2))
    lam: float = 1.0
    theta: float = 0.0
    rot: np.ndarray = field(default_factory=lambda: np.eye(3))
    shift: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(2)
        rot = np.asarray(self.rot, dtype=float).reshape(3, 3)
        shift = np.asarray(self.shift, dtype=float).reshape(3)
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if np.abs(rot @ rot.T - np.eye(3)).max() > 1e-12 or abs(np.linalg.det(rot) - 1) > 1e-12:
            raise ValueError("rot must be a rotation matrix (orthogonal, det 1) to 1e-12")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "rot", rot)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "theta", float(self.theta) % (2 * np.pi))

    @classmethod
    def identity(cls) -> "SimpleBubble":
        return cls()

    def chart_coordinate(self, z) -> np.ndarray:
        """e^{-i theta}(z - a)/lam as (..., 2) points."""
        p = as_points(z) - self.a
        c, s = np.cos(self.theta), np.sin(self.theta)
        return np.stack([c * p[..., 0] + s * p[..., 1], -s * p[..., 0] + c * p[..., 1]], -1) / self.lam

    def to_dict(self) -> dict:
        return {
            "a": self.a.tolist(),
            "lambda": self.lam,
            "theta": self.theta,
            "rot": self.rot.tolist(),
            "shift": self.shift.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimpleBubble":
        return cls(d["a"], d["lambda"], d.get("theta", 0.0), d.get("rot", np.eye(3)), d.get("shift", np.zeros(3)))


def eval_bubble(b: SimpleBubble, z) -> np.ndarray:
    return omega(b.chart_coordinate(z)) @ b.rot.T + b.shift


def bubble_gradient(b: SimpleBubble, z) -> tuple[np.ndarray, np.ndarray]:
    """Exact chart derivatives (f_x, f_y) of a simple bubble."""
    jet = omega_jet(b.chart_coordinate(z))
    cr, ci = np.cos(b.theta) / b.lam, -np.sin(b.theta) / b.lam
    fx = (cr * jet.wx + ci * jet.wy) @ b.rot.T
    fy = (-ci * jet.wx + cr * jet.wy) @ b.rot.T
    return fx, fy


def sample_bubbles(
    bubbles: Sequence[SimpleBubble], half_width: float, n: int, origin=(0.0, 0.0)
) -> Field2D:
    """Sum of simple bubbles on a grid, with exact derivative channels."""

    def fn(p):
        out = np.zeros(p.shape[:-1] + (3,))
        for b in bubbles:
            out += eval_bubble(b, p)
        return out

    def grad(p):
        gx = np.zeros(p.shape[:-1] + (3,))
        gy = np.zeros_like(gx)
        for b in bubbles:
            bx, by = bubble_gradient(b, p)
            gx += bx
            gy += by
        return gx, gy

    return Field2D.from_function(fn, half_width, n, origin, grad)


# -- rational maps ---------------------------------------------------------

def _trim(c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=complex))
    nz = np.flatnonzero(np.abs(c) > 0)
    return c[: nz[-1] + 1] if nz.size else c[:1] * 0


def sylvester_resultant(p: np.ndarray, q: np.ndarray) -> complex:
    """Resultant of two polynomials given by ascending coefficients."""
    m, n = len(p) - 1, len(q) - 1
    if m == 0:
        return p[0] ** n
    if n == 0:
        return q[0] ** m
    S = np.zeros((m + n, m + n), dtype=complex)
    for i in range(n):
        S[i, i : i + m + 1] = p[::-1]
    for i in range(m):
        S[n + i, i : i + n + 1] = q[::-1]
    return complex(np.linalg.det(S))


@dataclass(frozen=True, eq=False)
class RationalMap:
    """P/Q with complex coefficients listed in ascending powers of z."""

    P: np.ndarray
    Q: np.ndarray
    resultant_tol: float = 1e-10

    def __post_init__(self):
        P, Q = _trim(self.P), _trim(self.Q)
        if not np.any(P) and not np.any(Q):
            raise ValueError("P and Q cannot both vanish")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)
        if self.degree < 1:
            raise ValueError("a rational map needs degree max(deg P, deg Q) >= 1")
        if self.relative_resultant() < self.resultant_tol:
            raise ReducibleMap("P and Q share a common root")

    @property
    def degree(self) -> int:
        return max(len(self.P), len(self.Q)) - 1

    def relative_resultant(self) -> float:
        m, n = len(self.P) - 1, len(self.Q) - 1
        scale = np.linalg.norm(self.P) ** n * np.linalg.norm(self.Q) ** m
        return abs(sylvester_resultant(self.P, self.Q)) / scale

    def _pq(self, z):
        p = as_points(z)
        w = p[..., 0] + 1j * p[..., 1]
        P = np.polynomial.polynomial.polyval(w, self.P)
        Q = np.polynomial.polynomial.polyval(w, self.Q)
        dP = np.polynomial.polynomial.polyval(w, np.polynomial.polynomial.polyder(self.P)) if len(self.P) > 1 else 0 * w
        dQ = np.polynomial.polynomial.polyval(w, np.polynomial.polynomial.polyder(self.Q)) if len(self.Q) > 1 else 0 * w
        return P, Q, dP, dQ

    def sphere_map(self, z) -> np.ndarray:
        """omega(P/Q), evaluated homogeneously so poles of P/Q are harmless."""
        P, Q, _, _ = self._pq(z)
        PQ = P * np.conj(Q)
        nP, nQ = np.abs(P) ** 2, np.abs(Q) ** 2
        s = nP + nQ
        return np.stack([2 * PQ.real / s, 2 * PQ.imag / s, (nP - nQ) / s], axis=-1)

    def energy_density(self, z) -> np.ndarray:
        """|grad(omega o P/Q)|^2 = 8 |P'Q - Q'P|^2 / (|P|^2 + |Q|^2)^2."""
        P, Q, dP, dQ = self._pq(z)
        return 8.0 * np.abs(dP * Q - dQ * P) ** 2 / (np.abs(P) ** 2 + np.abs(Q) ** 2) ** 2


# -- plane quadrature -------------------------------------------------------

def _disk_integral(density: Callable, radius: float, tol: float, n_phi: int):
    phi = np.linspace(0.0, 2 * np.pi, n_phi, endpoint=False)
    e = np.stack([np.cos(phi), np.sin(phi)], axis=-1)

    def ring(r):
        vals = density(r * e)
        return r * vals.mean(axis=0) * 2 * np.pi

    val, err = integrate.quad_vec(ring, 0.0, radius, epsabs=tol / 20, epsrel=1e-13, limit=400)
    return np.asarray(val), float(np.max(np.abs(err)))


def plane_integral(density: Callable, tol: float = 1e-9, radius: float = 1.0) -> np.ndarray:
    """Integral of ``density`` over the whole plane.

    The disk |z| <= radius is integrated in polar coordinates; the exterior is
    mapped onto the disk |w| <= 1/radius by z = 1/w (Jacobian |w|^-4), so no
    truncation tail remains.  The angular rule is refined until it is stable.
    """

    def outer(w):
        w2 = (w**2).sum(-1)
        zc = np.stack([w[..., 0], -w[..., 1]], -1) / np.maximum(w2, 1e-300)[..., None]
        d = density(zc)
        jac = 1.0 / np.maximum(w2, 1e-300) ** 2
        return d * (jac[..., None] if d.ndim > jac.ndim else jac)

    prev = None
    for n_phi in (64, 128, 256, 512, 1024, 2048, 4096):
        v1, e1 = _disk_integral(density, radius, tol, n_phi)
        v2, e2 = _disk_integral(outer, 1.0 / radius, tol, n_phi)
        val = v1 + v2
        if prev is not None and np.max(np.abs(val - prev)) < tol / 10 and e1 + e2 < tol:
            return val
        prev = val
    raise QuadratureError(f"plane quadrature did not reach tolerance {tol}")


def energy_tail_bound(degree: int, radius: float) -> float:
    """Analytic bound 32 pi k^2 / R^2 on the energy outside radius R."""
    return 32.0 * np.pi * degree**2 / radius**2


def bubble_energy(r: RationalMap, quad_radius: float = 1.0, tol: float = 1e-9) -> float:
    """Dirichlet energy of omega o (P/Q) over the plane (expected 8 pi k)."""
    if not isinstance(r, RationalMap):
        raise TypeError("bubble_energy expects a RationalMap")
    return float(plane_integral(r.energy_density, tol, quad_radius))


# -- residual of the flat equation ------------------------------------------

def hbubble_residual(f: Field2D) -> ResidualReport:
    """Interior residual -Lap_h f + 2 f_x ^ f_y and the two conformality defects."""
    if f.is_scalar:
        raise ValueError("hbubble_residual needs an R^3-valued field")
    f.require()
    v = f.values
    fx, fy = central_gradient(v, f.h)
    res = -laplacian5(v, f.h) + 2.0 * np.cross(fx, fy)
    return ResidualReport(
        res,
        f.h,
        {
            "conformal_xy": np.einsum("...i,...i->...", fx, fy),
            "conformal_diag": np.einsum("...i,...i->...", fx, fx) - np.einsum("...i,...i->...", fy, fy),
        },
    )


__all__ = [
    "GRADIENT_BOUND",
    "GridTooSmall",
    "OmegaJet",
    "QuadratureError",
    "RationalMap",
    "ReducibleMap",
    "SimpleBubble",
    "as_points",
    "bubble_energy",
    "bubble_gradient",
    "energy_tail_bound",
    "eval_bubble",
    "hbubble_residual",
    "omega",
    "omega_jet",
    "plane_integral",
    "rotation_z",
    "sample_bubbles",
    "sylvester_resultant",
]
