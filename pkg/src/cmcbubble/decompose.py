"""Iterative extraction of simple bubbles from a sampled map.

Each step picks the grid point where the weighted remainder gradient
``(min_i d_i) |grad(f - fitted)|`` is largest, seeds a bubble there whose
scale makes its peak gradient match the remainder, and then refines all
bubbles found so far by a joint nonlinear least-squares fit.  Because
``omega(e^{-i theta} w)`` is a rotation of ``omega(w)`` about the third axis,
the chart angle is absorbed into the rotation and fitted bubbles carry
``theta = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .bubble import GRADIENT_BOUND, SimpleBubble, eval_bubble, omega_jet
from .curvature import CurvatureData
from .estimates import (
    _row_blocks,
    _rows_remainder_gradient,
    InteractionMatrix,
    interaction_matrix,
    min_distance_weight,
    remainder_gradient,
    weighted_sup_defect,
)
from .grid import Field2D, ResidualReport

ENERGY_PER_BUBBLE = 8.0 * math.pi


class ExtractionError(RuntimeError):
    def __init__(self, message: str, partial: "BubbleEnsemble | None" = None):
        super().__init__(message)
        self.partial = partial


class ScaleBelowResolution(ExtractionError):
    """A detected concentration is narrower than the grid can represent."""


@dataclass
class BubbleEnsemble:
    bubbles: list[SimpleBubble]
    eps: float = 0.0
    interactions: InteractionMatrix | None = None
    provenance: list[dict] = field(default_factory=list)
    curvature: CurvatureData | None = None

    def __post_init__(self):
        if self.interactions is None:
            self.interactions = interaction_matrix(
                [b.a for b in self.bubbles] or np.zeros((0, 2)), [b.lam for b in self.bubbles] or np.zeros(0)
            )

    def __len__(self) -> int:
        return len(self.bubbles)

    def min_orthogonality(self) -> float:
        k = len(self.bubbles)
        vals = [self.interactions.orthogonality(i, j) for i in range(k) for j in range(i + 1, k)]
        return min(vals) if vals else math.inf

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "bubbles": [b.to_dict() for b in self.bubbles],
            "interactions": self.interactions.to_dict(),
            "provenance": self.provenance,
            "curvature": None if self.curvature is None else self.curvature.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "BubbleEnsemble":
        curv = d.get("curvature")
        return cls(
            [SimpleBubble.from_dict(b) for b in d["bubbles"]],
            float(d.get("eps", 0.0)),
            provenance=list(d.get("provenance", [])),
            curvature=None if curv is None else CurvatureData(
                curv["riem"], curv["driem"], synthetic=curv.get("synthetic", False)),
        )

    @classmethod
    def from_json(cls, text: str) -> "BubbleEnsemble":
        return cls.from_dict(json.loads(text))


# -- fitting ---------------------------------------------------------------------------


def _pack(b: SimpleBubble, ref_rot: np.ndarray, free_shift: bool) -> np.ndarray:
    rv = Rotation.from_matrix(ref_rot.T @ b.rot).as_rotvec()
    head = np.concatenate([b.a, [math.log(b.lam)], rv])
    return np.concatenate([head, b.shift]) if free_shift else head


def _unpack(x: np.ndarray, ref_rot: np.ndarray, free_shift: bool) -> SimpleBubble:
    rot = ref_rot @ Rotation.from_rotvec(x[3:6]).as_matrix()
    u, _, vt = np.linalg.svd(rot)
    rot = u @ vt
    shift = x[6:9] if free_shift else -rot[:, 2]
    return SimpleBubble(x[:2], math.exp(x[2]), 0.0, rot, shift)


def _hat(v: np.ndarray) -> np.ndarray:
    """Cross-product matrices for vectors of shape (..., 3)."""
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


def _right_jacobian(phi: np.ndarray) -> np.ndarray:
    t = float(np.linalg.norm(phi))
    K = _hat(phi)
    if t < 1e-6:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return np.eye(3) - (1 - math.cos(t)) / t**2 * K + (t - math.sin(t)) / t**3 * (K @ K)


def _param_jacobian(x: np.ndarray, ref_rot: np.ndarray, free_shift: bool, pts: np.ndarray) -> np.ndarray:
    """d eval_bubble / d params at pts, shape (m, 3, 6 or 9)."""
    b = _unpack(x, ref_rot, free_shift)
    zeta = (pts - b.a) / b.lam
    jet = omega_jet(zeta)
    R = b.rot
    wx = jet.wx @ R.T
    wy = jet.wy @ R.T
    cols = [-wx / b.lam, -wy / b.lam, -(zeta[..., :1] * wx + zeta[..., 1:] * wy)]
    v = jet.value if free_shift else jet.value - np.array([0.0, 0.0, 1.0])
    drot = -np.einsum("ij,mjk,kl->mil", R, _hat(v), _right_jacobian(x[3:6]))
    J = np.concatenate([np.stack(cols, -1), drot], -1)
    if free_shift:
        J = np.concatenate([J, np.broadcast_to(np.eye(3), (len(pts), 3, 3))], -1)
    return J


def normalize_at_infinity(b: SimpleBubble) -> SimpleBubble:
    """Same bubble with the shift that makes it vanish at infinity."""
    return SimpleBubble(b.a, b.lam, b.theta, b.rot, -b.rot[:, 2])


def _seed(values: np.ndarray, gx: np.ndarray, gy: np.ndarray, a: np.ndarray, lam: float) -> SimpleBubble:
    """Bubble whose value and Jacobian at its centre match the remainder there."""
    c1 = gx * lam / 2.0
    c2 = gy * lam / 2.0
    M = np.stack([c1, c2, np.cross(c1, c2)], axis=1)
    u, _, vt = np.linalg.svd(M)
    rot = u @ vt
    if np.linalg.det(rot) < 0:
        u[:, -1] *= -1
        rot = u @ vt
    shift = values + rot @ np.array([0.0, 0.0, 1.0])
    return SimpleBubble(a, lam, 0.0, rot, shift)


def _disk_samples(f: Field2D, a: np.ndarray, radius: float, max_points: int) -> np.ndarray:
    ax = f.axis()
    xs, ys = ax + f.origin[0], ax + f.origin[1]
    ix = np.flatnonzero(np.abs(xs - a[0]) <= radius)
    iy = np.flatnonzero(np.abs(ys - a[1]) <= radius)
    stride = max(1, int(math.ceil(math.sqrt(ix.size * iy.size / max_points))))
    ix, iy = ix[::stride], iy[::stride]
    I, J = np.meshgrid(ix, iy, indexing="ij")
    keep = (xs[I] - a[0]) ** 2 + (ys[J] - a[1]) ** 2 <= radius**2
    return np.stack([I[keep], J[keep]], -1)


def fit_bubbles(f: Field2D, bubbles: list[SimpleBubble], max_points: int = 3000) -> tuple[list[SimpleBubble], float]:
    """Joint least-squares refinement of all bubbles on disks of radius 3 lambda.

    Only the sum of the constant shifts is visible in a sum of bubbles, so
    the first bubble carries the free constant and every later one is
    normalized to vanish at infinity.
    """
    pts_all = f.points()
    idx = np.concatenate([
        _disk_samples(f, b.a, max(3.0 * b.lam, 4.0 * f.h), max_points) for b in bubbles
    ])
    idx = np.unique(idx, axis=0)
    pts = pts_all[idx[:, 0], idx[:, 1]]
    target = f.values[idx[:, 0], idx[:, 1]]
    refs = [b.rot for b in bubbles]
    free = [k == 0 for k in range(len(bubbles))]
    if len(bubbles) > 1:
        # move the constants of later bubbles onto the first one
        extra = sum((b.shift + b.rot[:, 2] for b in bubbles[1:]), np.zeros(3))
        first = bubbles[0]
        bubbles = [SimpleBubble(first.a, first.lam, first.theta, first.rot, first.shift + extra)] + bubbles[1:]
    sizes = [9 if fr else 6 for fr in free]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    x0 = np.concatenate([_pack(b, r, fr) for b, r, fr in zip(bubbles, refs, free)])

    def unpack_all(x):
        return [_unpack(x[offs[k]:offs[k + 1]], r, fr) for k, (r, fr) in enumerate(zip(refs, free))]

    def resid(x):
        out = target.copy()
        for b in unpack_all(x):
            out -= eval_bubble(b, pts)
        return out.ravel()

    def jac(x):
        blocks = [
            _param_jacobian(x[offs[k]:offs[k + 1]], r, fr, pts) for k, (r, fr) in enumerate(zip(refs, free))
        ]
        return -np.concatenate(blocks, -1).reshape(-1, x.size)

    sol = least_squares(resid, x0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                        max_nfev=100 * x0.size)
    return unpack_all(sol.x), float(np.sqrt(np.mean(sol.fun**2)))


def extract_bubbles(
    f: Field2D,
    defect_threshold: float = 1e-3,
    max_bubbles: int = 8,
    orthogonality_threshold: float = 4.0,
    eps: float = 0.0,
) -> tuple[BubbleEnsemble, ResidualReport]:
    """Greedy bubble extraction; returns the ensemble and a residual report.

    The report's residual is the weighted remainder gradient on interior
    nodes; ``extra["weighted_sup_defect"]`` is its supremum.
    """
    if f.is_scalar or f.values.shape[2] != 3:
        raise ValueError("extract_bubbles needs an R^3-valued field")
    fitted: list[SimpleBubble] = []
    provenance: list[dict] = []
    pts = f.points()
    while True:
        defect, (i, j), gmag = weighted_sup_defect(f, fitted, return_argmax=True)
        if defect < defect_threshold:
            break
        if len(fitted) >= max_bubbles:
            raise ExtractionError(
                f"weighted defect {defect:.3g} still above {defect_threshold} after {max_bubbles} bubbles",
                BubbleEnsemble(fitted, eps, provenance=provenance),
            )
        a = pts[i, j]
        lam = GRADIENT_BOUND / gmag
        if lam < 2.0 * f.h:
            raise ScaleBelowResolution(
                f"concentration scale {lam:.3g} at {a.tolist()} is below twice the grid spacing {f.h:.3g}",
                BubbleEnsemble(fitted, eps, provenance=provenance),
            )
        if lam > f.half_width:
            raise ExtractionError(
                f"remainder with weighted defect {defect:.3g} does not concentrate: seed scale {lam:.3g} "
                f"exceeds the chart half width {f.half_width:.3g}",
                BubbleEnsemble(fitted, eps, provenance=provenance),
            )
        rem = f.values[i, j] - sum((eval_bubble(b, a) for b in fitted), np.zeros(3))
        gx, gy, _ = _rows_remainder_gradient(f, fitted, i - 1, i)
        seed = _seed(rem, gx[0, j - 1], gy[0, j - 1], a, lam)
        try:
            fitted, rms = fit_bubbles(f, fitted + [seed])
        except (ValueError, FloatingPointError) as exc:
            raise ExtractionError(f"bubble fit failed: {exc}", BubbleEnsemble(fitted, eps, provenance=provenance)) from exc
        provenance.append({
            "step": len(fitted),
            "grid_index": [int(i), int(j)],
            "seed_center": a.tolist(),
            "seed_lambda": lam,
            "defect_before": defect,
            "fit_rms": rms,
        })
    ens = BubbleEnsemble(fitted, eps, provenance=provenance)
    if len(fitted) > 1 and ens.min_orthogonality() < orthogonality_threshold:
        raise ExtractionError(
            f"extracted bubbles fail the orthogonality predicate ({ens.min_orthogonality():.3g})", ens
        )
    gx, gy = remainder_gradient(f, fitted)
    weighted = np.sqrt((gx**2 + gy**2).sum(-1))
    del gx, gy
    weighted *= min_distance_weight(fitted, f.interior_points())
    return ens, ResidualReport(weighted, f.h, extra={"weighted_sup_defect": defect})


# -- diagnostics ---------------------------------------------------------------------


@dataclass
class DecompositionReport:
    annulus_c0: list[float]
    annulus_c1: list[float]
    min_orthogonality: float
    orthogonality_ok: bool
    weighted_sup_defect: float
    remainder_gradient_l2: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def remainder_l2(f: Field2D, bubbles) -> float:
    sq = 0.0
    for i0, i1 in _row_blocks(f):
        gx, gy, _ = _rows_remainder_gradient(f, bubbles, i0, i1)
        sq += float(np.sum(gx**2 + gy**2))
    return float(np.sqrt(f.h**2 * sq))


def check_decomposition(f: Field2D, e: BubbleEnsemble, orthogonality_threshold: float = 4.0) -> DecompositionReport:
    """Annulus sizes of the remainder: sup |f - sum| and lam sup |grad(f - sum)| on lam <= |x-a| <= 3 lam."""
    k = len(e.bubbles)
    c0 = np.full(k, -np.inf)
    c1 = np.full(k, -np.inf)
    sq = 0.0
    for i0, i1 in _row_blocks(f):
        gx, gy, pts = _rows_remainder_gradient(f, e.bubbles, i0, i1)
        sq += float(np.sum(gx**2 + gy**2))
        rem = f.values[i0 + 1:i1 + 1, 1:-1].copy()
        for b in e.bubbles:
            rem -= eval_bubble(b, pts)
        gmag = np.sqrt((gx**2 + gy**2).sum(-1))
        rmag = np.linalg.norm(rem, axis=-1)
        for m, b in enumerate(e.bubbles):
            r = np.sqrt(((pts - b.a) ** 2).sum(-1))
            ring = (r >= b.lam) & (r <= 3.0 * b.lam)
            if ring.any():
                c0[m] = max(c0[m], float(rmag[ring].max()))
                c1[m] = max(c1[m], float(b.lam * gmag[ring].max()))
    c0 = [math.nan if not np.isfinite(v) else float(v) for v in c0]
    c1 = [math.nan if not np.isfinite(v) else float(v) for v in c1]
    mo = e.min_orthogonality()
    return DecompositionReport(
        c0, c1, mo, mo >= orthogonality_threshold,
        weighted_sup_defect(f, e.bubbles),
        float(np.sqrt(f.h**2 * sq)),
    )


def energy_quantization_check(e: BubbleEnsemble, f: Field2D, max_relative_defect: float = 0.1) -> float:
    """Dirichlet energy of f divided by 8 pi times the number of bubbles."""
    energy = f.dirichlet_energy()
    k = len(e)
    d = remainder_l2(f, e.bubbles)
    if k == 0:
        if energy <= 1e-24:
            return 1.0
        raise ValueError("empty ensemble but the field carries energy; the remainder dominates")
    if d > max_relative_defect * math.sqrt(energy):
        raise ValueError(f"remainder gradient norm {d:.3g} is too large to interpret the energy")
    return energy / (ENERGY_PER_BUBBLE * k)


__all__ = [
    "BubbleEnsemble",
    "DecompositionReport",
    "ENERGY_PER_BUBBLE",
    "ExtractionError",
    "ScaleBelowResolution",
    "check_decomposition",
    "energy_quantization_check",
    "extract_bubbles",
    "fit_bubbles",
    "remainder_l2",
]
