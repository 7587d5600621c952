"""Linearization of the H-system at the standard bubble.

Sign convention: as elsewhere in the package the Laplacian in residuals is
the positive one, ``Lap+ = -(d_xx + d_yy)``.  The scalar Jacobi operator is

    J alpha = Lap+ alpha - 8 / (1 + |x|^2)^2 alpha,

whose bounded kernel is spanned by ``psi0 = (1 - r^2)/(1 + r^2)`` and
``psi_i = x_i / (1 + r^2)``.  In analyst notation this is
``Lap alpha + 8/(1+r^2)^2 alpha = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from .bubble import SimpleBubble, bubble_gradient
from .grid import Field2D, ResidualReport, central_gradient, laplacian5

KERNEL_KINDS = ("psi0", "psi1", "psi2")


class FrameDegenerate(ValueError):
    """The bubble frame is numerically singular somewhere on the grid."""


class NoSpectralGap(RuntimeError):
    """No separation between near-kernel and the rest of the spectrum was found."""


class NotLinearizedSolution(ValueError):
    """Input is too far from a solution of the linearized system."""


def potential(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return 8.0 / (1.0 + (z**2).sum(-1)) ** 2


def psi0(z) -> np.ndarray:
    r2 = (np.asarray(z, dtype=float) ** 2).sum(-1)
    return (1.0 - r2) / (1.0 + r2)


def psi1(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z[..., 0] / (1.0 + (z**2).sum(-1))


def psi2(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return z[..., 1] / (1.0 + (z**2).sum(-1))


_PSI = {"psi0": psi0, "psi1": psi1, "psi2": psi2}


@dataclass(frozen=True)
class KernelElement:
    kind: str

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"kind must be one of {KERNEL_KINDS}")

    def __call__(self, z) -> np.ndarray:
        return _PSI[self.kind](z)

    def sample(self, half_width: float, n: int) -> Field2D:
        return Field2D.from_function(self, half_width, n)


def schroedinger_residual(alpha: Field2D) -> ResidualReport:
    """Interior values of ``-Lap_h alpha - 8/(1+r^2)^2 alpha``."""
    if not alpha.is_scalar:
        raise ValueError("schroedinger_residual expects a scalar field")
    alpha.require()
    v = alpha.values
    res = -laplacian5(v, alpha.h) - potential(alpha.interior_points()) * v[1:-1, 1:-1]
    return ResidualReport(res, alpha.h)


# -- frame decomposition ----------------------------------------------------

@dataclass
class FrameCoefficients:
    """r_x = a w_x + b w_y + c N,  r_y = d w_x + e w_y + f N,  N = w_x ^ w_y."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    e: np.ndarray
    f: np.ndarray
    reconstruction_error: float

    def as_tuple(self):
        return self.a, self.b, self.c, self.d, self.e, self.f


def _frame(b: SimpleBubble, pts):
    wx, wy = bubble_gradient(b, pts)
    return wx, wy, np.cross(wx, wy)


def frame_decompose(r: Field2D, b: SimpleBubble, min_conformal_factor: float = 1e-10) -> FrameCoefficients:
    if r.is_scalar:
        raise ValueError("frame_decompose needs an R^3-valued field")
    r.require(3)
    rx, ry = r.gradient()
    wx, wy, N = _frame(b, r.interior_points())
    mu = np.einsum("...i,...i->...", wx, wx)
    if mu.min() < min_conformal_factor:
        raise FrameDegenerate("|grad omega| vanishes numerically on the grid")

    def coeffs(v):
        return (np.einsum("...i,...i->...", v, wx) / mu,
                np.einsum("...i,...i->...", v, wy) / mu,
                np.einsum("...i,...i->...", v, N) / mu**2)

    a, bb, c = coeffs(rx)
    d, e, f = coeffs(ry)
    recon_x = a[..., None] * wx + bb[..., None] * wy + c[..., None] * N
    recon_y = d[..., None] * wx + e[..., None] * wy + f[..., None] * N
    err = float(max(np.abs(recon_x - rx).max(), np.abs(recon_y - ry).max())) if rx.size else 0.0
    return FrameCoefficients(a, bb, c, d, e, f, err)


@dataclass
class PlinReport:
    relations: dict[str, float]
    linearized_residual: float
    conformality_residual: float
    tolerance: float
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not any(self.flags.values())


def linearized_defects(r: Field2D, b: SimpleBubble) -> tuple[np.ndarray, np.ndarray]:
    """Linearized equation ``Lap+ r + 2(r_x ^ w_y + w_x ^ r_y)`` and linear conformality defects."""
    rx, ry = central_gradient(r.values, r.h)
    wx, wy, _ = _frame(b, r.interior_points())
    eq = -laplacian5(r.values, r.h) + 2.0 * (np.cross(rx, wy) + np.cross(wx, ry))
    conf = np.stack([
        np.einsum("...i,...i->...", rx, wx) - np.einsum("...i,...i->...", ry, wy),
        np.einsum("...i,...i->...", rx, wy) + np.einsum("...i,...i->...", ry, wx),
    ], -1)
    return eq, conf


def plin_check(r: Field2D, b: SimpleBubble, tol: float | None = None, strict: bool = False) -> PlinReport:
    """Measure the six frame relations satisfied by linearized solutions.

    Each relation is reported as a max-norm relative to the size of the
    coefficients; a relation is flagged when it exceeds ``tol`` (default
    ``50 h^2``).  With ``strict`` an input that is not an approximate
    linearized solution raises instead of being reported.
    """
    co = frame_decompose(r, b)
    a, bb, c, d, e, f = co.as_tuple()
    h = r.h
    tol = 50.0 * h * h if tol is None else tol
    scale = max(np.abs(a).max(), np.abs(bb).max(), np.abs(c).max(), np.abs(d).max(), 1e-300)
    pts = r.interior_points()[1:-1, 1:-1]
    wx_inner = _frame(b, pts)[0]
    g2 = 2.0 * np.einsum("...i,...i->...", wx_inner, wx_inner)
    ax, ay = central_gradient(a, h)
    bx, by = central_gradient(bb, h)
    s = (slice(1, -1), slice(1, -1))
    rel = {
        "e=a": np.abs(e - a).max() / scale,
        "d=-b": np.abs(d + bb).max() / scale,
        "Lap a=|grad w|^2 a": np.abs(-laplacian5(a, h) - g2 * a[s]).max() / scale,
        "Lap b=|grad w|^2 b": np.abs(-laplacian5(bb, h) - g2 * bb[s]).max() / scale,
        "c=2(-a_x+b_y)/|grad w|^2": np.abs(c[s] - 2.0 / g2 * (-ax + by)).max() / scale,
        "f=2(-b_x-a_y)/|grad w|^2": np.abs(f[s] - 2.0 / g2 * (-bx - ay)).max() / scale,
    }
    rel = {k: float(v) for k, v in rel.items()}
    eq, conf = linearized_defects(r, b)
    rscale = max(np.abs(r.values).max(), 1e-300)
    lin_res = float(np.abs(eq).max() / rscale)
    conf_res = float(np.abs(conf).max() / rscale)
    if strict and max(lin_res, conf_res) > max(tol, 1e-12):
        raise NotLinearizedSolution(
            f"linearized residual {lin_res:.3g} / conformality {conf_res:.3g} exceed tolerance"
        )
    flags = {k: v > tol for k, v in rel.items()}
    return PlinReport(rel, lin_res, conf_res, tol, flags)


# -- kernel dimension -------------------------------------------------------

@dataclass
class KernelSpectrum:
    dimension: int
    singular_values: np.ndarray
    gap: float
    angles: np.ndarray
    relative_errors: dict[str, float]
    disc_radius: float
    grid_n: int


def jacobi_disk_operator(disc_radius: float, grid_n: int):
    """Weighted Jacobi operator on a disk with natural (Neumann) boundary.

    Returns ``(A, inside_points, weight)`` where ``A`` is the symmetric matrix
    ``W^{-1/2} (Lap+_h - V) W^{-1/2}``.  The weight ``W = 4/(1+r^2)^2`` is the
    area density of the bubble, so ``A`` discretizes the Jacobi operator of
    the round sphere pulled back to the chart; the Laplacian uses only
    neighbours inside the disk.
    """
    x = np.linspace(-disc_radius, disc_radius, grid_n)
    h = x[1] - x[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    r2 = X**2 + Y**2
    inside = r2 < (disc_radius - 0.5 * h) ** 2
    idx = -np.ones((grid_n, grid_n), dtype=int)
    idx[inside] = np.arange(int(inside.sum()))
    I, J = np.nonzero(inside)
    k = idx[I, J]
    rows, cols, vals = [], [], []
    diag = np.zeros(k.size)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ii, jj = I + di, J + dj
        ok = (ii >= 0) & (ii < grid_n) & (jj >= 0) & (jj < grid_n)
        ok[ok] = inside[ii[ok], jj[ok]]
        rows.append(k[ok])
        cols.append(idx[ii[ok], jj[ok]])
        vals.append(-np.ones(int(ok.sum())) / h**2)
        diag += ok / h**2
    pts = np.stack([X[I, J], Y[I, J]], -1)
    rows.append(k)
    cols.append(k)
    vals.append(diag - potential(pts))
    N = k.size
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    w = 4.0 / (1.0 + (pts**2).sum(-1)) ** 2
    D = sp.diags(1.0 / np.sqrt(w))
    return (D @ A @ D).tocsr(), pts, w


def kernel_dimension(
    disc_radius: float = 20.0,
    grid_n: int = 256,
    n_values: int = 8,
    gap_threshold: float = 10.0,
) -> KernelSpectrum:
    """Count the near-zero singular values of the discretized Jacobi operator.

    The dimension is the position of the largest ratio between consecutive
    sorted singular values; that ratio must reach ``gap_threshold``.
    """
    if grid_n < 64:
        raise ValueError("grid_n must be at least 64")
    A, pts, w = jacobi_disk_operator(disc_radius, grid_n)
    ev, vec = spla.eigsh(A, k=n_values, sigma=-1e-3, which="LM")
    order = np.argsort(np.abs(ev))
    sv, vec = np.abs(ev[order]), vec[:, order]
    ratios = sv[1:] / np.maximum(sv[:-1], 1e-300)
    dim = int(np.argmax(ratios)) + 1
    gap = float(ratios[dim - 1])
    if gap < gap_threshold:
        raise NoSpectralGap(f"largest consecutive ratio {gap:.3g} is below {gap_threshold}")
    basis = vec[:, :dim]
    sw = np.sqrt(w)
    psis = {k: _PSI[k](pts) * sw for k in KERNEL_KINDS}
    angles = sla.subspace_angles(basis, np.stack(list(psis.values()), 1))
    rel = {}
    for k, p in psis.items():
        proj = basis @ (basis.T @ p)
        rel[k] = float(np.linalg.norm(p - proj) / np.linalg.norm(p))
    return KernelSpectrum(dim, sv, gap, angles, rel, disc_radius, grid_n)


@dataclass
class RadialModeReport:
    k: int
    growth_ratio: float
    min_rayleigh: float


def radial_mode_check(k: int = 2, radius: float = 20.0, n: int = 1500) -> RadialModeReport:
    """Fourier mode alpha(r) cos(k phi) of the Jacobi equation.

    ``growth_ratio`` is alpha(R)/R^k for the solution regular at the origin;
    a non-zero limit means no solution decays.  ``min_rayleigh`` is the
    smallest weighted Rayleigh quotient of the mode on [0, R] (natural
    boundary at R); it tends to 4 for k = 2 and to 0 for k = 1.
    """
    def rhs(r, y):
        a, da = y
        return [da, -da / r + (k * k / r**2 - 8.0 / (1 + r * r) ** 2) * a]

    r0 = 1e-4
    sol = solve_ivp(rhs, (r0, radius), [r0**k, k * r0 ** (k - 1)], rtol=1e-10, atol=1e-14)
    growth = float(sol.y[0, -1] / radius**k)

    h = radius / n
    rc = (np.arange(n) + 0.5) * h
    re = np.arange(1, n) * h
    main = np.zeros(n)
    main[:-1] += re / h**2
    main[1:] += re / h**2
    main += (k * k / rc**2 - 8.0 / (1 + rc**2) ** 2) * rc
    off = -re / h**2
    K = np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
    M = np.diag(rc * 4.0 / (1 + rc**2) ** 2)
    lam = sla.eigh(K, M, eigvals_only=True, subset_by_index=[0, 0])[0]
    return RadialModeReport(k, growth, float(lam))


__all__ = [
    "FrameCoefficients",
    "FrameDegenerate",
    "KERNEL_KINDS",
    "KernelElement",
    "KernelSpectrum",
    "NoSpectralGap",
    "NotLinearizedSolution",
    "PlinReport",
    "RadialModeReport",
    "frame_decompose",
    "jacobi_disk_operator",
    "kernel_dimension",
    "linearized_defects",
    "plin_check",
    "potential",
    "psi0",
    "psi1",
    "psi2",
    "radial_mode_check",
    "schroedinger_residual",
]
