"""Integral estimates and geometric diagnostics.

* gradient of the logarithmic potential against a sampled source;
* the weighted Green-kernel integral and its log/linear decay rate;
* Wente-type inequalities measured on sampled fields;
* diameter/area/mean-curvature inequalities of closed surfaces;
* bubble interaction terms and the weighted sup defect of a decomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import integrate
from scipy.interpolate import RectBivariateSpline

from .bubble import SimpleBubble, as_points, bubble_gradient, eval_bubble
from .grid import Field2D, central_gradient
from .records import CheckRecord, bound_record

WENTE_VARIANTS = ("disk-w1", "plane-w2", "sup-mll", "trilinear-w3")


class GreenQuadratureError(ValueError):
    """Evaluation point or source violates the representation's assumptions."""


# -- Green representation ------------------------------------------------------

def _gauss_panels(length: float, panel: float, order: int):
    npan = max(1, int(math.ceil(length / panel)))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, length, npan + 1)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (b - a) * x[None] + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w[None]
    return nodes.ravel(), weights.ravel()


def green_gradient_represent(
    f_source: Field2D,
    z0,
    n_phi: int = 48,
    panel: float = 0.25,
    order: int = 8,
    check_decay: bool = True,
) -> np.ndarray:
    """``int grad_{z0} G(z0, z) f(z) dz`` with ``G = log|z0 - z| / (2 pi)``.

    The integral is taken over the field's square in polar coordinates
    centred at z0, where the kernel's 1/|z - z0| singularity cancels against
    the Jacobian; the source is interpolated by bicubic splines.  Angular
    sectors are split at the square's corners.
    """
    z0 = np.asarray(z0, dtype=float).reshape(2)
    f = f_source
    f.require()
    L, (ox, oy) = f.half_width, f.origin
    lo, hi = np.array([ox - L, oy - L]), np.array([ox + L, oy + L])
    if np.any(z0 - lo < 2 * f.h) or np.any(hi - z0 < 2 * f.h):
        raise GreenQuadratureError("z0 is too close to the grid boundary")
    vals = f.values if f.values.ndim == 3 else f.values[..., None]
    if check_decay:
        ring = np.concatenate([vals[0], vals[-1], vals[:, 0], vals[:, -1]])
        peak = float(np.abs(vals).max())
        if peak > 0 and float(np.abs(ring).max()) * L**2 > peak:
            raise GreenQuadratureError("source does not decay like |z|^-2 towards the grid boundary")
    if not np.any(vals):
        return np.zeros((2,) + vals.shape[2:]) if f.values.ndim == 3 else np.zeros(2)
    ax = f.axis()
    splines = [RectBivariateSpline(ax + ox, ax + oy, vals[..., c], kx=3, ky=3) for c in range(vals.shape[2])]

    corners = np.array([[hi[0], hi[1]], [lo[0], hi[1]], [lo[0], lo[1]], [hi[0], lo[1]]])
    cang = np.sort(np.mod(np.arctan2(corners[:, 1] - z0[1], corners[:, 0] - z0[0]), 2 * np.pi))
    bounds = np.concatenate([cang, [cang[0] + 2 * np.pi]])
    xg, wg = np.polynomial.legendre.leggauss(n_phi)
    total = np.zeros((2, vals.shape[2]))
    for a, b in zip(bounds[:-1], bounds[1:]):
        phis = 0.5 * (b - a) * xg + 0.5 * (a + b)
        wphi = 0.5 * (b - a) * wg
        for phi, wp in zip(phis, wphi):
            e = np.array([np.cos(phi), np.sin(phi)])
            with np.errstate(divide="ignore"):
                tx = np.where(e > 0, (hi - z0) / e, np.where(e < 0, (lo - z0) / e, np.inf))
            rmax = float(tx.min())
            r, wr = _gauss_panels(rmax, panel, order)
            px, py = z0[0] + r * e[0], z0[1] + r * e[1]
            fv = np.stack([s.ev(px, py) for s in splines], -1)  # (nr, C)
            total += -(wp / (2 * np.pi)) * e[:, None] * (wr @ fv)[None, :]
    return total[:, 0] if f.values.ndim == 2 else total


def green_weight_integral(z0, tol: float = 1e-10) -> float:
    """``int_{R^2} |grad G(z, z0)| / (1 + |z|^2) dz`` with the radial part in closed form.

    Along the ray z = z0 + r e the radial integral of 1/(r^2 + 2 b r + c)
    over (0, inf) equals ``(pi/2 - arctan(b/s))/s`` with ``b = <z0, e>``,
    ``c = 1 + |z0|^2`` and ``s = sqrt(c - b^2) >= 1``.
    """
    z0 = np.asarray(z0, dtype=float).reshape(2)
    c = 1.0 + z0 @ z0

    def ray(phi):
        b = z0[0] * np.cos(phi) + z0[1] * np.sin(phi)
        s = np.sqrt(c - b * b)
        return (0.5 * np.pi - np.arctan(b / s)) / s

    rz = float(np.hypot(*z0))
    points = None
    if rz > 0:
        peak = float(np.mod(np.arctan2(-z0[1], -z0[0]), 2 * np.pi))
        width = 1.0 / (1.0 + rz)
        points = sorted({min(max(peak + d, 0.0), 2 * np.pi) for d in (-20 * width, -width, 0.0, width, 20 * width)})
    val, err = integrate.quad(ray, 0.0, 2 * np.pi, points=points, limit=500, epsabs=tol, epsrel=tol)
    if err > 1e3 * tol * max(1.0, abs(val)):
        raise GreenQuadratureError(f"weight integral did not converge (error {err:.2g})")
    return float(val / (2 * np.pi))


def green_weight_bound(z0) -> tuple[float, float]:
    """Returns ``(lhs, lhs (1 + |z0|) / log(2 + |z0|))``."""
    lhs = green_weight_integral(z0)
    r = float(np.hypot(*np.asarray(z0, dtype=float).reshape(2)))
    return lhs, lhs * (1.0 + r) / math.log(2.0 + r)


# -- Wente inequalities -----------------------------------------------------------

@dataclass
class WenteResult:
    variant: str
    lhs: float
    rhs: float
    ratio: float
    bound: float | None

    def record(self, slack: float = 0.02) -> CheckRecord:
        if self.bound is None:
            return CheckRecord(f"wente {self.variant} (measured constant)", self.lhs, self.rhs, self.ratio,
                               math.nan, True, "constant measured, not asserted")
        return bound_record(f"wente {self.variant}", self.ratio, self.bound, slack)


@lru_cache(maxsize=8)
def _disk_solver(n: int, radius: float):
    x = np.linspace(-radius, radius, n)
    h = x[1] - x[0]
    X, Y = np.meshgrid(x, x, indexing="ij")
    inside = (X**2 + Y**2) < radius**2
    inside[[0, -1], :] = False
    inside[:, [0, -1]] = False
    idx = -np.ones((n, n), dtype=int)
    idx[inside] = np.arange(int(inside.sum()))
    I, J = np.nonzero(inside)
    k = idx[I, J]
    rows, cols, vals = [k], [k], [np.full(k.size, 4.0 / h**2)]
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = idx[I + di, J + dj]
        ok = nb >= 0
        rows.append(k[ok])
        cols.append(nb[ok])
        vals.append(np.full(int(ok.sum()), -1.0 / h**2))
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(k.size,) * 2)
    return spla.splu(A), inside


def solve_disk_poisson(source: np.ndarray, h: float, radius: float = 1.0) -> np.ndarray:
    """u with ``-(u_xx + u_yy) = source`` in the disk and u = 0 outside (staircase boundary)."""
    n = source.shape[0]
    lu, inside = _disk_solver(n, radius)
    u = np.zeros_like(source)
    rhs = source[inside]
    u[inside] = lu.solve(np.ascontiguousarray(rhs))
    return u


def solve_plane_poisson(source: np.ndarray, h: float, pad: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the decaying solution of ``-(u_xx + u_yy) = source`` via zero-padded FFT.

    The source must have zero mean (a Jacobian determinant of compactly
    supported maps does).  Returns ``(u_x, u_y)`` on the original grid.
    """
    n = source.shape[0]
    N = pad * n
    big = np.zeros((N, N) + source.shape[2:])
    off = (N - n) // 2
    big[off:off + n, off:off + n] = source
    k = 2 * np.pi * np.fft.fftfreq(N, d=h)
    KX, KY = np.meshgrid(k, k, indexing="ij")
    K2 = KX**2 + KY**2
    K2[0, 0] = 1.0
    F = np.fft.fft2(big, axes=(0, 1))
    if F.ndim == 3:
        U = F / K2[..., None]
        U[0, 0] = 0.0
        ux = np.real(np.fft.ifft2(1j * KX[..., None] * U, axes=(0, 1)))
        uy = np.real(np.fft.ifft2(1j * KY[..., None] * U, axes=(0, 1)))
    else:
        U = F / K2
        U[0, 0] = 0.0
        ux = np.real(np.fft.ifft2(1j * KX * U))
        uy = np.real(np.fft.ifft2(1j * KY * U))
    return ux, uy


def _l2(a, h):
    return float(np.sqrt(h * h * np.sum(a**2)))


def wente_check(v: Field2D, variant: str = "disk-w1", u: Field2D | None = None) -> WenteResult:
    """Measure one Wente-type inequality for an R^3-valued field v.

    ``disk-w1``: ``(|u|_inf + |grad u|_2) / |grad v|_2^2`` for
    ``Lap u = -2 v_x ^ v_y`` with zero boundary data on the unit disk (bound 1/pi).
    ``plane-w2``: ``|grad u|_2 / |grad v|_2^2`` for the decaying plane solution (bound 2/pi).
    ``sup-mll``: ``|grad u|_inf / (|grad v|_inf |grad v|_2)`` for ``Lap u = v_x ^ v_y``.
    ``trilinear-w3``: ``|int <u, v_x ^ v_y>| / (|grad v|_2 |grad u|_2^2)`` exactly as
    displayed; u defaults to the disk solution.  The last two constants are
    measured, not asserted.
    """
    if variant not in WENTE_VARIANTS:
        raise ValueError(f"variant must be one of {WENTE_VARIANTS}")
    if v.is_scalar or v.values.shape[2] != 3:
        raise ValueError("v must be R^3-valued")
    h = v.h
    vx = np.gradient(v.values, h, axis=0, edge_order=2)
    vy = np.gradient(v.values, h, axis=1, edge_order=2)
    jac = np.cross(vx, vy)
    gv2 = float(h * h * np.sum(vx**2 + vy**2))
    if gv2 == 0.0 or not np.any(jac):
        bound = {"disk-w1": 1 / math.pi, "plane-w2": 2 / math.pi}.get(variant)
        return WenteResult(variant, 0.0, gv2, 0.0, bound)
    if variant in ("disk-w1", "trilinear-w3"):
        if abs(v.half_width - 1.0) > 1e-12 or v.origin != (0.0, 0.0):
            raise ValueError("disk variants expect the grid [-1, 1]^2")
        uu = solve_disk_poisson(2.0 * jac, h)
        ux = np.gradient(uu, h, axis=0)
        uy = np.gradient(uu, h, axis=1)
        if variant == "disk-w1":
            lhs = float(np.linalg.norm(uu, axis=-1).max()) + math.sqrt(h * h * np.sum(ux**2 + uy**2))
            return WenteResult(variant, lhs, gv2, lhs / gv2, 1 / math.pi)
        if u is not None:
            uu = u.values
            ux = np.gradient(uu, h, axis=0)
            uy = np.gradient(uu, h, axis=1)
        lhs = abs(float(h * h * np.sum(uu * jac)))
        rhs = math.sqrt(gv2) * float(h * h * np.sum(ux**2 + uy**2))
        return WenteResult(variant, lhs, rhs, lhs / rhs if rhs else 0.0, None)
    src = jac - jac.mean(axis=(0, 1))
    if variant == "plane-w2":
        ux, uy = solve_plane_poisson(2.0 * src, h)
        lhs = math.sqrt(h * h * np.sum(ux**2 + uy**2))
        return WenteResult(variant, lhs, gv2, lhs / gv2, 2 / math.pi)
    ux, uy = solve_plane_poisson(-src, h)
    lhs = float(np.sqrt((ux**2 + uy**2).sum(-1)).max())
    rhs = float(np.sqrt((vx**2 + vy**2).sum(-1)).max()) * math.sqrt(gv2)
    return WenteResult(variant, lhs, rhs, lhs / rhs, None)


def band_limited_field(rng: np.random.Generator, n: int = 129, kmax: int = 3, amplitude: float = 1.0) -> Field2D:
    """Random trigonometric polynomial times the bump (1 - r^2)^3 on the unit disk."""
    x = np.linspace(-1.0, 1.0, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    r2 = X**2 + Y**2
    bump = np.where(r2 < 1.0, (1.0 - r2) ** 3, 0.0)
    out = np.zeros((n, n, 3))
    for c in range(3):
        for kx in range(-kmax, kmax + 1):
            for ky in range(-kmax, kmax + 1):
                ph = np.pi * (kx * X + ky * Y)
                a, b = rng.normal(size=2) / (1.0 + kx * kx + ky * ky)
                out[..., c] += a * np.cos(ph) + b * np.sin(ph)
    return Field2D(amplitude * out * bump[..., None], 1.0)


def wente_corpus(n_fields: int = 50, seed: int = 20240531, n: int = 129) -> list[Field2D]:
    rng = np.random.default_rng(seed)
    return [band_limited_field(rng, n, amplitude=float(rng.uniform(0.2, 3.0))) for _ in range(n_fields)]


# -- surface diagnostics -----------------------------------------------------------

@dataclass
class SurfaceDiagnostics:
    diameter: float
    area: float
    mean_curvature: float
    diameter_error_bound: float = 0.0
    records: list[CheckRecord] = field(default_factory=list)

    @property
    def est1_ratio(self) -> float:
        return self.diameter * abs(self.mean_curvature) / 2.0

    @property
    def simon_ratio(self) -> float:
        """RHS/LHS of diameter < (2/pi) sqrt(A) sqrt(int H^2) for constant H."""
        return (2.0 / math.pi) * self.area * abs(self.mean_curvature) / self.diameter

    @property
    def estim_product(self) -> float:
        return self.diameter * abs(self.mean_curvature)


def _fibonacci_directions(m: int) -> np.ndarray:
    i = np.arange(m) + 0.5
    z = 1 - 2 * i / m
    phi = np.pi * (1 + 5**0.5) * i
    s = np.sqrt(1 - z * z)
    return np.stack([s * np.cos(phi), s * np.sin(phi), z], -1)


def point_set_diameter(points: np.ndarray, n_dirs: int = 600, chunk: int = 200_000) -> float:
    """Max pairwise distance, searched among extreme points of many projections."""
    P = points.reshape(-1, 3)
    dirs = _fibonacci_directions(n_dirs)
    cand = set()
    for s in range(0, P.shape[0], chunk):
        proj = P[s:s + chunk] @ dirs.T
        cand.update((np.argmax(proj, 0) + s).tolist())
        cand.update((np.argmin(proj, 0) + s).tolist())
    # keep global extremes only
    C = P[sorted(cand)]
    proj = C @ dirs.T
    keep = np.unique(np.concatenate([np.argmax(proj, 0), np.argmin(proj, 0)]))
    C = C[keep]
    diff = C[:, None, :] - C[None, :, :]
    return float(np.sqrt((diff**2).sum(-1)).max())


def surface_diagnostics(f: Field2D, H_nominal: float) -> SurfaceDiagnostics:
    if f.is_scalar:
        raise ValueError("surface_diagnostics needs an R^3-valued field")
    fx, fy = f.full_gradient()
    E = np.einsum("...i,...i->...", fx, fx)
    F = np.einsum("...i,...i->...", fx, fy)
    G = np.einsum("...i,...i->...", fy, fy)
    det = E * G - F * F
    inner = det[1:-1, 1:-1]
    if inner.size and not inner.min() > 0:
        raise ValueError("degenerate immersion: first fundamental form is singular")
    w = np.ones(f.n)
    w[0] = w[-1] = 0.5
    area = float(np.sum(np.outer(w, w) * np.sqrt(np.maximum(det, 0.0))) * f.h**2)
    diam = point_set_diameter(f.values)
    err = f.h * float(np.sqrt(np.maximum(E, G)).max())
    d = SurfaceDiagnostics(diam, area, float(H_nominal), err)
    d.records = [
        bound_record("diameter * sup|H| >= 2", 2.0, d.estim_product, 1e-3),
        bound_record("diameter < (2/pi) sqrt(A) sqrt(int H^2)", diam, (2 / math.pi) * area * abs(H_nominal)),
        CheckRecord("diameter * H (two-sided bound)", d.estim_product, 1.0, d.estim_product, math.nan, True),
    ]
    return d


# -- interactions ----------------------------------------------------------------------

@dataclass
class InteractionMatrix:
    centers: np.ndarray
    scales: np.ndarray
    t: np.ndarray

    @property
    def t_max(self) -> float:
        k = len(self.scales)
        if k < 2:
            return 0.0
        return float(self.t[~np.eye(k, dtype=bool)].max())

    def d(self, i: int, x) -> np.ndarray:
        x = as_points(x)
        return np.sqrt(self.scales[i] ** 2 + ((x - self.centers[i]) ** 2).sum(-1))

    def orthogonality(self, i: int, j: int) -> float:
        """d_i(a_j)/lambda_j + d_j(a_i)/lambda_i."""
        return float(self.d(i, self.centers[j]) / self.scales[j] + self.d(j, self.centers[i]) / self.scales[i])

    def to_dict(self) -> dict:
        return {"t": self.t.tolist(), "t_max": self.t_max}


def interaction_matrix(centers, scales) -> InteractionMatrix:
    c = np.asarray(centers, dtype=float).reshape(-1, 2)
    s = np.asarray(scales, dtype=float).reshape(-1)
    if c.shape[0] != s.shape[0]:
        raise ValueError("centers and scales must have the same length")
    if np.any(s <= 0):
        raise ValueError("scales must be positive")
    diff2 = ((c[:, None, :] - c[None, :, :]) ** 2).sum(-1)
    dj_ai = s[None, :] ** 2 + diff2  # (d_j(a_i))^2 at [i, j]
    di_aj = s[:, None] ** 2 + diff2  # (d_i(a_j))^2 at [i, j]
    t = s[None, :] / (dj_ai + di_aj)
    np.fill_diagonal(t, 0.0)
    return InteractionMatrix(c, s, t)


def min_distance_weight(bubbles: Sequence[SimpleBubble], pts: np.ndarray) -> np.ndarray:
    """min_i d_i(x); identically 1 for an empty ensemble."""
    if not bubbles:
        return np.ones(pts.shape[:-1])
    d = [np.sqrt(b.lam**2 + ((pts - b.a) ** 2).sum(-1)) for b in bubbles]
    return np.min(d, axis=0)


def _rows_remainder_gradient(f: Field2D, bubbles, i0: int, i1: int):
    """Remainder gradient on interior rows ``i0:i1`` (interior indexing)."""
    ax = f.axis()
    xs = ax + f.origin[0]
    ys = ax + f.origin[1]
    if f.has_exact_gradient:
        X, Y = np.meshgrid(xs[i0 + 1:i1 + 1], ys[1:-1], indexing="ij")
        pts = np.stack([X, Y], -1)
        gx, gy = f.dx[i0 + 1:i1 + 1, 1:-1].copy(), f.dy[i0 + 1:i1 + 1, 1:-1].copy()
        for b in bubbles:
            bx, by = bubble_gradient(b, pts)
            gx -= bx
            gy -= by
        return gx, gy, pts
    X, Y = np.meshgrid(xs[i0:i1 + 2], ys, indexing="ij")
    allpts = np.stack([X, Y], -1)
    vals = f.values[i0:i1 + 2].copy()
    for b in bubbles:
        vals -= eval_bubble(b, allpts)
    gx, gy = central_gradient(vals, f.h)
    return gx, gy, allpts[1:-1, 1:-1]


def _row_blocks(f: Field2D, budget: int = 400_000):
    m = f.n - 2
    step = max(1, budget // max(m, 1))
    for i0 in range(0, m, step):
        yield i0, min(m, i0 + step)


def remainder_gradient(f: Field2D, bubbles: Sequence[SimpleBubble]) -> tuple[np.ndarray, np.ndarray]:
    """Interior gradient of f minus the bubble sum."""
    parts = [_rows_remainder_gradient(f, bubbles, i0, i1)[:2] for i0, i1 in _row_blocks(f)]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def weighted_sup_defect(f: Field2D, ensemble: Sequence[SimpleBubble], return_argmax: bool = False):
    """sup_x (min_i d_i(x)) |grad(f - sum of bubbles)(x)| over interior nodes."""
    best = (-1.0, (0, 0), 0.0)
    for i0, i1 in _row_blocks(f):
        gx, gy, pts = _rows_remainder_gradient(f, ensemble, i0, i1)
        mag = np.sqrt((gx**2 + gy**2).sum(-1))
        wd = min_distance_weight(ensemble, pts) * mag
        k = int(np.argmax(wd))  # first maximal entry in C order = lowest lexicographic index
        if wd.ravel()[k] > best[0]:
            i, j = np.unravel_index(k, wd.shape)
            best = (float(wd.ravel()[k]), (i0 + i + 1, j + 1), float(mag[i, j]))
    return best if return_argmax else best[0]


# -- fundamental estimate (diagnostic only) -------------------------------------------

def festim_terms(z, bubbles: Sequence[SimpleBubble], eps: float, r_local=None) -> dict:
    """Per-bubble terms of the composite remainder estimate at a point z.

    Each term is ``(r_i + eps^3/lam_i + sum_j t_ij) log(2 + q_i) / (1 + q_i)``
    with ``q_i = |a_i - z| / lam_i``; ``r_local`` supplies the local remainder
    sizes r_i (default zero).  Nothing is asserted about these numbers.
    """
    z = np.asarray(z, dtype=float).reshape(2)
    k = len(bubbles)
    r_local = np.zeros(k) if r_local is None else np.asarray(r_local, dtype=float)
    im = interaction_matrix([b.a for b in bubbles], [b.lam for b in bubbles]) if k else None
    terms = []
    for i, b in enumerate(bubbles):
        q = float(np.hypot(*(b.a - z)) / b.lam)
        tsum = float(im.t[i].sum()) if im is not None else 0.0
        pref = r_local[i] + eps**3 / b.lam + tsum
        terms.append({"bubble": i, "prefactor": pref, "decay": math.log(2 + q) / (1 + q),
                      "term": pref * math.log(2 + q) / (1 + q)})
    return {"z": z.tolist(), "terms": terms, "t_max": im.t_max if im is not None else 0.0}


__all__ = [
    "GreenQuadratureError",
    "InteractionMatrix",
    "SurfaceDiagnostics",
    "WENTE_VARIANTS",
    "WenteResult",
    "band_limited_field",
    "festim_terms",
    "green_gradient_represent",
    "green_weight_bound",
    "green_weight_integral",
    "interaction_matrix",
    "min_distance_weight",
    "point_set_diameter",
    "remainder_gradient",
    "solve_disk_poisson",
    "solve_plane_poisson",
    "surface_diagnostics",
    "weighted_sup_defect",
    "wente_check",
    "wente_corpus",
]
