"""Damped Newton solver for the rescaled H-system in normal coordinates.

The discretized system on the interior nodes of a square chart is

    F(u) = Lap+_h u - Gamma_eps(u)<grad u, grad u> + 2 sqrt|g_eps| g_eps^{-1} (u_x ^ u_y) = 0,

where ``Gamma_eps`` and ``g_eps`` are the cubic normal-coordinate expansions of
the model metric evaluated at ``eps u``, ``Lap+ = -(d_xx + d_yy)`` and first
derivatives are central differences.  Boundary values are frozen to the trace
of the corrected bubble.  For the standard bubble at eps = 0 the system is the
flat H-bubble equation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .balancing import kernel_fields
from .bubble import SimpleBubble
from .corrected import CorrectedBubble, sample_corrected
from .curvature import MetricModel, christoffel_expansion, metric_expansion
from .estimates import SurfaceDiagnostics, surface_diagnostics
from .grid import Field2D, central_gradient, laplacian5

BOUNDARY_KINDS = ("corrected-bubble-trace",)
PROJECTIONS = ("kernel", "translation")


class ExpansionDomainError(ValueError):
    """The rescaled image leaves the region where the truncated metric is trusted."""


class SingularJacobian(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class SolveConfig:
    L: float
    grid_n: int
    eps: float
    metric: MetricModel
    boundary: str = "corrected-bubble-trace"
    newton_tol: float = 1e-9
    newton_max_iter: int = 20
    damping: float = 1.0
    max_expansion_radius: float = 0.5
    min_step: float = 2.0**-10

    def __post_init__(self):
        if self.grid_n < 64:
            raise ValueError("grid_n must be at least 64")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.boundary not in BOUNDARY_KINDS:
            raise ValueError(f"boundary must be one of {BOUNDARY_KINDS}")
        if self.L <= 0:
            raise ValueError("L must be positive")

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.grid_n - 1)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "metric"}
        d["metric"] = self.metric.to_dict()
        return d


@dataclass
class SolveResult:
    field: Field2D
    residual_history: list[float]
    conformality_defect: float
    center: np.ndarray
    diagnostics: SurfaceDiagnostics | None
    converged: bool
    iterations: int
    step_history: list[float] = field(default_factory=list)

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1]


# -- residual ----------------------------------------------------------------------------

def _check_domain(u: np.ndarray, cfg: SolveConfig) -> None:
    r = cfg.eps * float(np.linalg.norm(u, axis=-1).max())
    if r > cfg.max_expansion_radius:
        raise ExpansionDomainError(
            f"eps |u| reaches {r:.3g}, beyond the trusted expansion radius {cfg.max_expansion_radius}"
        )


def _metric_factor(cfg: SolveConfig, u: np.ndarray) -> np.ndarray:
    """M = sqrt(det g) g^{-1} at eps u."""
    _, g_inv, s = metric_expansion(cfg.metric.curvature, cfg.eps * u)
    return s[..., None, None] * g_inv


def _residual_parts(v: np.ndarray, h: float, cfg: SolveConfig):
    fx, fy = central_gradient(v, h)
    u = v[1:-1, 1:-1]
    wedge = np.cross(fx, fy)
    res = -laplacian5(v, h) + 2.0 * np.einsum("...ji,...i->...j", _metric_factor(cfg, u), wedge)
    if cfg.eps != 0.0:
        gam = christoffel_expansion(cfg.metric.curvature, u, cfg.eps)
        gram = np.einsum("...i,...k->...ik", fx, fx) + np.einsum("...i,...k->...ik", fy, fy)
        res -= np.einsum("...jik,...ik->...j", gam, gram)
    return res, fx, fy, u, wedge


def assemble_residual(f: Field2D, cfg: SolveConfig) -> Field2D:
    """Pointwise residual of the discretized system on the interior nodes.

    The returned field lives on the interior grid (half width ``L - h``).
    """
    if f.is_scalar or f.values.shape[-1] != 3:
        raise ValueError("assemble_residual needs an R^3-valued field")
    f.require()
    _check_domain(f.values, cfg)
    res, *_ = _residual_parts(f.values, f.h, cfg)
    return Field2D(res, f.half_width - f.h, f.origin)


def conformality_defect(f: Field2D, cfg: SolveConfig) -> float:
    """Max of |<u_x,u_x>_g - <u_y,u_y>_g| and |<u_x,u_y>_g| over interior nodes."""
    fx, fy = central_gradient(f.values, f.h)
    g, _, _ = metric_expansion(cfg.metric.curvature, cfg.eps * f.values[1:-1, 1:-1])
    gx = np.einsum("...ij,...j->...i", g, fx)
    gy = np.einsum("...ij,...j->...i", g, fy)
    d1 = np.einsum("...i,...i->...", gx, fx) - np.einsum("...i,...i->...", gy, fy)
    d2 = np.einsum("...i,...i->...", gx, fy)
    return float(max(np.abs(d1).max(), np.abs(d2).max()))


# -- Jacobian -----------------------------------------------------------------------------

_LEVI = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    _LEVI[_i, _j, _k] = 1.0
    _LEVI[_i, _k, _j] = -1.0


def _metric_factor_derivative(cfg: SolveConfig, u: np.ndarray) -> np.ndarray:
    """dM[..., j, i, a] = d M^{ji} / d u^a."""
    c = cfg.metric.curvature
    e = cfg.eps
    y = e * u
    _, g_inv, s = metric_expansion(c, y)
    ds = -(np.einsum("an,...n->...a", c.ric + c.ric.T, y) / 6.0
           + (np.einsum("ank,...n,...k->...a", c.dric, y, y)
              + np.einsum("nak,...n,...k->...a", c.dric, y, y)
              + np.einsum("nka,...n,...k->...a", c.dric, y, y)) / 12.0)
    R, dR = c.riem, c.driem
    dq2 = (np.einsum("iamj,...m->...ija", R, y) + np.einsum("ikaj,...k->...ija", R, y)) / 3.0
    dq3 = (np.einsum("iamjn,...m,...n->...ija", dR, y, y)
           + np.einsum("ikajn,...k,...n->...ija", dR, y, y)
           + np.einsum("ikmja,...k,...m->...ija", dR, y, y)) / 6.0
    dM = s[..., None, None, None] * -(dq2 + dq3) + g_inv[..., None] * ds[..., None, None, :]
    return e * dM


def _christoffel_derivative(cfg: SolveConfig, u: np.ndarray) -> np.ndarray:
    """dG[..., j, i, k, a] = d Gamma^j_{ik} / d u^a."""
    c = cfg.metric.curvature
    e = cfg.eps
    B = c.B
    out = e**2 * np.broadcast_to(np.einsum("ijka->jika", c.A), u.shape[:-1] + (3, 3, 3, 3))
    out = out + e**3 * (np.einsum("ijkan,...n->...jika", B, u) + np.einsum("ijkna,...n->...jika", B, u))
    return out


def _difference_matrices(m: int, h: float):
    """Interior central-difference and 5-point operators with homogeneous boundary data."""
    one = np.ones(m)
    d1 = sp.diags([-one[:-1], one[:-1]], [-1, 1]) / (2.0 * h)
    lap1 = sp.diags([-one[:-1], 2 * one, -one[:-1]], [-1, 0, 1]) / h**2
    I = sp.identity(m)
    Dx = sp.kron(d1, I, format="csr")  # interior nodes ordered with x slowest
    Dy = sp.kron(I, d1, format="csr")
    Lap = (sp.kron(lap1, I) + sp.kron(I, lap1)).tocsr()
    return Dx, Dy, Lap


def _block_diag(blocks: np.ndarray) -> sp.bsr_matrix:
    m = blocks.shape[0]
    return sp.bsr_matrix((blocks, np.arange(m), np.arange(m + 1)), shape=(3 * m, 3 * m))


def assemble_jacobian(v: np.ndarray, h: float, cfg: SolveConfig, ops=None) -> sp.csc_matrix:
    """Analytic Jacobian of the interior residual with respect to interior values."""
    n = v.shape[0]
    m = (n - 2) ** 2
    Dx, Dy, Lap = ops if ops is not None else _difference_matrices(n - 2, h)
    fx, fy = central_gradient(v, h)
    u = v[1:-1, 1:-1]
    M = _metric_factor(cfg, u)
    # d(M wedge)/d u_x^a = M^{ji} eps_{iab} u_y^b ; d/d u_y^b = M^{ji} eps_{iab} u_x^a
    Jx = 2.0 * np.einsum("...ji,iab,...b->...ja", M, _LEVI, fy)
    Jy = 2.0 * np.einsum("...ji,iab,...a->...jb", M, _LEVI, fx)
    wedge = np.cross(fx, fy)
    Ju = 2.0 * np.einsum("...jia,...i->...ja", _metric_factor_derivative(cfg, u), wedge)
    if cfg.eps != 0.0:
        gam = christoffel_expansion(cfg.metric.curvature, u, cfg.eps)
        Jx -= 2.0 * np.einsum("...jak,...k->...ja", gam, fx)
        Jy -= 2.0 * np.einsum("...jak,...k->...ja", gam, fy)
        gram = np.einsum("...i,...k->...ik", fx, fx) + np.einsum("...i,...k->...ik", fy, fy)
        Ju -= np.einsum("...jika,...ik->...ja", _christoffel_derivative(cfg, u), gram)
    I3 = sp.identity(3)
    J = (sp.kron(Lap, I3)
         + _block_diag(Jx.reshape(m, 3, 3)) @ sp.kron(Dx, I3)
         + _block_diag(Jy.reshape(m, 3, 3)) @ sp.kron(Dy, I3)
         + _block_diag(Ju.reshape(m, 3, 3)))
    return J.tocsc()


# -- Newton ---------------------------------------------------------------------------------

def _norm(res: np.ndarray) -> float:
    return float(np.abs(res).max())


def _center(v: np.ndarray, h: float) -> np.ndarray:
    """Area-weighted mean of the image with weight |grad u|^2 / 2 (interior nodes)."""
    fx, fy = central_gradient(v, h)
    w = 0.5 * ((fx**2).sum(-1) + (fy**2).sum(-1))
    return (w[..., None] * v[1:-1, 1:-1]).sum((0, 1)) / w.sum()


def default_initial(cfg: SolveConfig, bubble: SimpleBubble | None = None) -> Field2D:
    b = SimpleBubble.identity() if bubble is None else bubble
    return sample_corrected(CorrectedBubble(b, cfg.metric.curvature, cfg.eps), cfg.L, cfg.grid_n)


def newton_solve(cfg: SolveConfig, initial: Field2D | None = None, diagnostics: bool = True,
                 raise_on_failure: bool = False) -> SolveResult:
    """Damped Newton iteration with Armijo backtracking on the max-norm residual.

    Boundary values stay at those of ``initial``.  Non-convergence sets
    ``converged=False`` unless ``raise_on_failure`` is given.
    """
    f = default_initial(cfg) if initial is None else initial
    if f.n != cfg.grid_n or abs(f.half_width - cfg.L) > 1e-12:
        raise ValueError("initial field does not live on the configured grid")
    v = np.array(f.values, dtype=float)
    h = f.h
    _check_domain(v, cfg)
    ops = _difference_matrices(cfg.grid_n - 2, h)
    res, *_ = _residual_parts(v, h, cfg)
    history = [_norm(res)]
    steps: list[float] = []
    converged = history[-1] <= cfg.newton_tol
    it = 0
    while not converged and it < cfg.newton_max_iter:
        it += 1
        J = assemble_jacobian(v, h, cfg, ops)
        try:
            delta = spla.spsolve(J, -res.ravel())
        except RuntimeError as exc:  # SuperLU reports exact singularity this way
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(delta)):
            raise SingularJacobian("Newton step is not finite")
        delta = delta.reshape(res.shape)
        t = cfg.damping
        while True:
            trial = v.copy()
            trial[1:-1, 1:-1] += t * delta
            try:
                _check_domain(trial, cfg)
                r_trial, *_ = _residual_parts(trial, h, cfg)
                nt = _norm(r_trial)
            except ExpansionDomainError:
                nt = math.inf
            if nt <= (1.0 - 1e-4 * t) * history[-1] or nt <= cfg.newton_tol:
                break
            t *= 0.5
            if t < cfg.min_step:
                break
        if t < cfg.min_step:
            msg = f"line search stalled at residual {history[-1]:.3g} after {it} iterations"
            if raise_on_failure:
                raise NonConvergence(msg)
            break
        v, res = trial, r_trial
        history.append(nt)
        steps.append(t)
        converged = nt <= cfg.newton_tol
    if not converged and raise_on_failure:
        raise NonConvergence(f"residual {history[-1]:.3g} above tolerance after {it} iterations")
    out = f.with_values(v)
    diag = surface_diagnostics(out, 1.0) if diagnostics else None
    return SolveResult(out, history, conformality_defect(out, cfg), _center(v, h), diag, converged, it, steps)


# -- force projection and the drift experiment ----------------------------------------------

def chart_fields(b: SimpleBubble, pts: np.ndarray, fields: str = "kernel") -> np.ndarray:
    """Test fields on the chart, shape (..., 3, 3) with the field index first.

    ``kernel``: pushforwards of the sphere fields through the bubble;
    ``translation``: the constant vectors e_l.
    """
    if fields == "translation":
        return np.broadcast_to(np.eye(3), pts.shape[:-1] + (3, 3))
    if fields != "kernel":
        raise ValueError(f"fields must be one of {PROJECTIONS}")
    from .bubble import omega

    w = omega(b.chart_coordinate(pts))
    return kernel_fields(w) @ b.rot.T


def force_projection(f: Field2D, cfg: SolveConfig, b: SimpleBubble | None = None,
                     fields: str = "kernel", subtract_floor: bool = True) -> np.ndarray:
    """``-sum h^2 F(f) . Y^l`` over interior nodes.

    With ``subtract_floor`` the same projection of the eps = 0 residual of the
    uncorrected bubble (the discretization floor) is removed.
    """
    b = SimpleBubble.identity() if b is None else b
    res = assemble_residual(f, cfg)
    pts = res.points()
    Y = chart_fields(b, pts, fields)
    out = -f.h**2 * np.einsum("ablj,abj->l", Y, res.values)
    if subtract_floor:
        flat_cfg = SolveConfig(cfg.L, cfg.grid_n, 0.0, cfg.metric, newton_tol=cfg.newton_tol)
        from .bubble import sample_bubbles

        floor = assemble_residual(sample_bubbles([b], f.half_width, f.n, f.origin), flat_cfg)
        out += f.h**2 * np.einsum("ablj,abj->l", Y, floor.values)
    return out


@dataclass
class DriftRow:
    eps: float
    center: np.ndarray
    force: np.ndarray
    drift_direction: np.ndarray
    residual: float
    iterations: int
    converged: bool
    conformality_defect: float
    estim_product: float


@dataclass
class DriftTable:
    rows: list[DriftRow]
    projection: str
    config: dict
    complete: bool = True

    def scaled_forces(self, power: int = 3) -> np.ndarray:
        return np.array([r.force / r.eps**power for r in self.rows])

    def ratios(self, component: int = 0) -> list[float]:
        """Force ratios between consecutive eps values."""
        f = [r.force[component] for r in self.rows]
        return [f[k] / f[k + 1] for k in range(len(f) - 1)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "center_x", "center_y", "center_z", "force_1", "force_2", "force_3",
                    "residual", "iterations"])
        for r in self.rows:
            w.writerow([repr(r.eps), *map(repr, map(float, r.center)), *map(repr, map(float, r.force)),
                        repr(r.residual), r.iterations])
        return buf.getvalue()

    def manifest(self, **extra) -> str:
        payload = {
            "projection": self.projection,
            "config": self.config,
            "complete": self.complete,
            "rows": [
                {
                    "eps": r.eps,
                    "center": r.center.tolist(),
                    "force": r.force.tolist(),
                    "drift_direction": r.drift_direction.tolist(),
                    "residual": r.residual,
                    "iterations": r.iterations,
                    "converged": r.converged,
                    "conformality_defect": r.conformality_defect,
                    "estim_product": r.estim_product,
                }
                for r in self.rows
            ],
        }
        payload.update(extra)
        return json.dumps(payload, indent=2, sort_keys=True)


def drift_experiment(metric: MetricModel, eps_list, L: float = 6.0, grid_n: int = 129,
                     projection: str = "kernel", solve: bool = True, newton_tol: float = 1e-9) -> DriftTable:
    """Force on the corrected bubble at the chart origin for each eps, plus the solved centre.

    Raises :class:`NonConvergence` carrying the partial table if a solve fails.
    """
    eps_list = [float(e) for e in eps_list]
    if any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    if projection not in PROJECTIONS:
        raise ValueError(f"projection must be one of {PROJECTIONS}")
    base_cfg = SolveConfig(L, grid_n, eps_list[0], metric, newton_tol=newton_tol)
    table = DriftTable([], projection, {**base_cfg.to_dict(), "eps_list": eps_list})
    for eps in eps_list:
        cfg = SolveConfig(L, grid_n, eps, metric, newton_tol=newton_tol)
        f0 = default_initial(cfg)
        force = force_projection(f0, cfg, fields=projection)
        nrm = float(np.linalg.norm(force))
        direction = force / nrm if nrm > 0 else np.zeros(3)
        if solve:
            sol = newton_solve(cfg, f0)
            row = DriftRow(eps, sol.center, force, direction, sol.final_residual, sol.iterations,
                           sol.converged, sol.conformality_defect,
                           sol.diagnostics.estim_product if sol.diagnostics else math.nan)
            table.rows.append(row)
            if not sol.converged:
                table.complete = False
                raise NonConvergence(f"solve at eps={eps} did not converge", table)
        else:
            res = assemble_residual(f0, cfg)
            table.rows.append(DriftRow(eps, _center(f0.values, f0.h), force, direction, _norm(res.values), 0,
                                       True, conformality_defect(f0, cfg), math.nan))
    return table


def gauge_sensitivity(metric: MetricModel, eps: float, widths=(6.0, 8.0), h: float = 6.0 / 64,
                      projection: str = "kernel") -> dict:
    """Solved centre and force for several chart half widths at a common grid spacing."""
    out = {}
    for L in widths:
        n = int(round(2 * L / h)) + 1
        tab = drift_experiment(metric, [eps], L=L, grid_n=n, projection=projection)
        r = tab.rows[0]
        out[float(L)] = {"center": r.center.tolist(), "force": r.force.tolist(), "grid_n": n}
    return out


__all__ = [
    "BOUNDARY_KINDS",
    "DriftRow",
    "DriftTable",
    "ExpansionDomainError",
    "NonConvergence",
    "PROJECTIONS",
    "SingularJacobian",
    "SolveConfig",
    "SolveResult",
    "assemble_jacobian",
    "assemble_residual",
    "chart_fields",
    "conformality_defect",
    "default_initial",
    "drift_experiment",
    "force_projection",
    "gauge_sensitivity",
    "newton_solve",
]
