"""Curvature tensors at a point and normal-coordinate expansions.

Index conventions (fixed here and used everywhere else):

* ``riem[i, k, m, j] = R_{ikmj}``, normalized so that the round sphere of
  sectional curvature kappa has ``R_{kmnl} = kappa (d_kn d_ml - d_kl d_mn)``
  and ``R_{abab} = +kappa``;
* ``ric[m, l] = R_{kmkl}`` (contraction of the first and third slots);
* derivative tensors carry the differentiation index last:
  ``driem[i, k, m, j, n] = R_{ikmj,n}``, ``dric[m, l, n] = Ric_{ml,n}``;
* ``gamma[..., j, i, k] = Gamma^j_{ik}`` (upper index first).

In normal coordinates ``g_ij(y) = d_ij + R_{ikmj} y^k y^m / 3 + R_{ikmj,n} y^k y^m y^n / 6``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

I3 = np.eye(3)
SYMMETRY_TOL = 1e-12


class InconsistentCurvature(ValueError):
    """Curvature arrays violate a symmetry, trace or Bianchi relation."""


def riemann_from_ricci_3d(ric, scal: float, g=None) -> np.ndarray:
    """Three-dimensional Riemann tensor determined by its Ricci tensor."""
    ric = np.asarray(ric, dtype=float)
    g = I3 if g is None else np.asarray(g, dtype=float)
    if np.abs(ric - ric.T).max() > 1e-12 * max(1.0, np.abs(ric).max()):
        raise InconsistentCurvature("ric must be symmetric")
    trace = float(np.einsum("ij,ij->", np.linalg.inv(g), ric))
    if abs(trace - scal) > 1e-10 * max(1.0, abs(scal)):
        raise InconsistentCurvature(f"scal={scal} differs from the trace of ric ({trace})")
    return (
        np.einsum("kn,ml->kmnl", g, ric)
        - np.einsum("kl,mn->kmnl", g, ric)
        + np.einsum("ml,kn->kmnl", g, ric)
        - np.einsum("mn,kl->kmnl", g, ric)
        + 0.5 * scal * (np.einsum("kl,mn->kmnl", g, g) - np.einsum("kn,ml->kmnl", g, g))
    )


def _sym_basis() -> list[np.ndarray]:
    out = []
    for m in range(3):
        for l in range(m, 3):
            for q in range(3):
                E = np.zeros((3, 3, 3))
                E[m, l, q] = E[l, m, q] = 1.0
                out.append(E / np.linalg.norm(E))
    return out


_BASIS = _sym_basis()


def divergence(dric: np.ndarray) -> np.ndarray:
    """Ric_{ml},^m at the base point (flat index placement)."""
    return np.einsum("mlm->l", dric)


def bianchi_defect(dric: np.ndarray) -> np.ndarray:
    """Ric_{ml},^m - (1/2) d_l Scal; zero for data coming from a metric."""
    return divergence(dric) - 0.5 * np.einsum("mml->l", dric)


def project_compliant(dric, zero_scal_gradient: bool = False) -> np.ndarray:
    """Closest symmetric-in-(m,l) tensor satisfying the contracted Bianchi identity.

    With ``zero_scal_gradient`` the trace d Scal is also projected to zero,
    which leaves only the part invisible to both traces.
    """
    X = np.asarray(dric, dtype=float)
    X = 0.5 * (X + X.transpose(1, 0, 2))
    cons = [bianchi_defect]
    if zero_scal_gradient:
        cons.append(lambda T: np.einsum("mml->l", T))
    C = np.array([np.concatenate([c(E) for c in cons]) for E in _BASIS]).T
    coeff = np.array([np.sum(X * E) for E in _BASIS])
    coeff -= C.T @ np.linalg.lstsq(C @ C.T, C @ coeff, rcond=None)[0]
    return sum(c * E for c, E in zip(coeff, _BASIS))


def dric_for_scal_gradient(dscal) -> np.ndarray:
    """Isotropic Bianchi-compliant Ric_{ml,p} with prescribed d Scal.

    ``(6 d_ml s_p + d_mp s_l + d_lp s_m) / 20``: its trace over (m,l) is s and
    its divergence is s/2.
    """
    s = np.asarray(dscal, dtype=float).reshape(3)
    return (6 * np.einsum("ml,p->mlp", I3, s) + np.einsum("mp,l->mlp", I3, s)
            + np.einsum("lp,m->mlp", I3, s)) / 20.0


def random_compliant_dric(rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    return project_compliant(scale * rng.normal(size=(3, 3, 3)))


def _riemann_symmetry_defect(R: np.ndarray) -> float:
    d = [
        R + R.transpose(1, 0, 2, 3),
        R + R.transpose(0, 1, 3, 2),
        R - R.transpose(2, 3, 0, 1),
        R + R.transpose(0, 2, 3, 1) + R.transpose(0, 3, 1, 2),
    ]
    return max(float(np.abs(x).max()) for x in d)


@dataclass(frozen=True, eq=False)
class CurvatureData:
    riem: np.ndarray
    driem: np.ndarray
    ric: np.ndarray | None = None
    dric: np.ndarray | None = None
    scal: float | None = None
    dscal: np.ndarray | None = None
    synthetic: bool = False

    def __post_init__(self):
        riem = np.asarray(self.riem, dtype=float).reshape(3, 3, 3, 3)
        driem = np.asarray(self.driem, dtype=float).reshape(3, 3, 3, 3, 3)
        scale = max(1.0, float(np.abs(riem).max()), float(np.abs(driem).max()))
        tol = SYMMETRY_TOL * scale
        if _riemann_symmetry_defect(riem) > tol:
            raise InconsistentCurvature("riem violates the algebraic Riemann symmetries")
        if max(_riemann_symmetry_defect(driem[..., n]) for n in range(3)) > tol:
            raise InconsistentCurvature("driem violates the algebraic Riemann symmetries")
        traces = {
            "ric": np.einsum("kmkl->ml", riem),
            "dric": np.einsum("kmkln->mln", driem),
        }
        traces["scal"] = float(np.trace(traces["ric"]))
        traces["dscal"] = np.einsum("mmk->k", traces["dric"])
        for name, expected in traces.items():
            given = getattr(self, name)
            if given is None:
                object.__setattr__(self, name, expected)
                continue
            given = np.asarray(given, dtype=float).reshape(np.shape(expected))
            if np.abs(given - expected).max() > 1e-10 * scale:
                raise InconsistentCurvature(f"{name} is not the trace of the Riemann data")
            object.__setattr__(self, name, given if np.ndim(given) else float(given))
        object.__setattr__(self, "riem", riem)
        object.__setattr__(self, "driem", driem)
        if not self.synthetic and np.abs(bianchi_defect(self.dric)).max() > tol:
            raise InconsistentCurvature(
                "contracted second Bianchi identity fails; pass synthetic=True to allow it"
            )

    # -- constructors ---------------------------------------------------
    @classmethod
    def flat(cls) -> "CurvatureData":
        return cls(np.zeros((3, 3, 3, 3)), np.zeros((3, 3, 3, 3, 3)))

    @classmethod
    def from_ricci(cls, ric, dric=None, synthetic: bool = False) -> "CurvatureData":
        ric = np.asarray(ric, dtype=float)
        dric = np.zeros((3, 3, 3)) if dric is None else np.asarray(dric, dtype=float)
        riem = riemann_from_ricci_3d(ric, float(np.trace(ric)))
        driem = np.stack(
            [riemann_from_ricci_3d(dric[:, :, p], float(np.trace(dric[:, :, p]))) for p in range(3)],
            axis=-1,
        )
        return cls(riem, driem, synthetic=synthetic)

    # -- derived tensors ----------------------------------------------------
    @property
    def divric(self) -> np.ndarray:
        return divergence(self.dric)

    @cached_property
    def A(self) -> np.ndarray:
        """A_{ijkm} = (R_{kmij} + R_{imkj}) / 3, stored as A[i, j, k, m]."""
        R = self.riem
        return (np.einsum("kmij->ijkm", R) + np.einsum("imkj->ijkm", R)) / 3.0

    @cached_property
    def B(self) -> np.ndarray:
        """B_{ijkmn} from the cubic metric coefficients, stored as B[i, j, k, m, n]."""
        dR = self.driem
        return (
            2 * np.einsum("kmijn->ijkmn", dR)
            + 2 * np.einsum("imkjn->ijkmn", dR)
            + np.einsum("kmnji->ijkmn", dR)
            + np.einsum("imnjk->ijkmn", dR)
            - np.einsum("imnkj->ijkmn", dR)
        ) / 12.0

    def second_bianchi_defect(self) -> float:
        """Max of the cyclic sum R_{ikmj,n} + R_{ikjn,m} + R_{iknm,j}."""
        d = self.driem
        cyc = d + np.einsum("ikjnm->ikmjn", d) + np.einsum("iknmj->ikmjn", d)
        return float(np.abs(cyc).max())

    def rotated(self, Q) -> "CurvatureData":
        """Curvature data expressed in the frame rotated by the orthogonal matrix Q."""
        Q = np.asarray(Q, dtype=float)
        riem = np.einsum("ai,bk,cm,dj,ikmj->abcd", Q, Q, Q, Q, self.riem)
        driem = np.einsum("ai,bk,cm,dj,en,ikmjn->abcde", Q, Q, Q, Q, Q, self.driem)
        return CurvatureData(riem, driem, synthetic=self.synthetic)

    def scaled(self, s: float) -> "CurvatureData":
        return CurvatureData(s * self.riem, s * self.driem, synthetic=self.synthetic)

    def with_driem(self, driem) -> "CurvatureData":
        return CurvatureData(self.riem, driem, synthetic=self.synthetic)

    def to_dict(self) -> dict:
        return {
            "riem": self.riem.ravel().tolist(),
            "driem": self.driem.ravel().tolist(),
            "synthetic": self.synthetic,
        }


# -- expansions -------------------------------------------------------------

def metric_expansion(c: CurvatureData, y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Metric, inverse metric and sqrt(det g) to cubic order at normal coordinates y."""
    y = np.asarray(y, dtype=float)
    q2 = np.einsum("ikmj,...k,...m->...ij", c.riem, y, y) / 3.0
    q3 = np.einsum("ikmjn,...k,...m,...n->...ij", c.driem, y, y, y) / 6.0
    g = I3 + q2 + q3
    g_inv = I3 - q2 - q3
    sqrt_det = (1.0 - np.einsum("mn,...m,...n->...", c.ric, y, y) / 6.0
                - np.einsum("mnk,...m,...n,...k->...", c.dric, y, y, y) / 12.0)
    return g, g_inv, sqrt_det


def christoffel_expansion(c: CurvatureData, y, eps: float) -> np.ndarray:
    """Christoffel symbols of g_eps(y) = g(eps y): eps^2 A y + eps^3 B y y."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    y = np.asarray(y, dtype=float)
    return (eps**2 * np.einsum("ijkm,...m->...jik", c.A, y)
            + eps**3 * np.einsum("ijkmn,...m,...n->...jik", c.B, y, y))


def christoffel_from_metric(g_fn, y, step: float = 1e-5) -> np.ndarray:
    """Christoffel symbols of an arbitrary metric field by central differences."""
    y = np.asarray(y, dtype=float)
    dg = np.empty((3, 3, 3))  # dg[l, i, j] = d_l g_ij
    for l in range(3):
        e = np.zeros(3)
        e[l] = step
        dg[l] = (g_fn(y + e) - g_fn(y - e)) / (2 * step)
    ginv = np.linalg.inv(g_fn(y))
    low = 0.5 * (np.einsum("ikl->lik", dg) + np.einsum("kil->lik", dg) - np.einsum("lik->lik", dg))
    # low[l, i, k] = (d_i g_kl + d_k g_il - d_l g_ik)/2
    return np.einsum("jl,lik->jik", ginv, low)


# -- metric models ------------------------------------------------------------

MODEL_KINDS = ("flat", "constant-curvature", "quadratic-scal", "user-polynomial")


@dataclass(frozen=True, eq=False)
class MetricModel:
    kind: str
    curvature: CurvatureData
    params: dict = field(default_factory=dict)

    def is_positive_definite(self, radius: float, samples: int = 400, seed: int = 0) -> bool:
        """Sampled check that the truncated metric stays positive definite for |y| <= radius."""
        rng = np.random.default_rng(seed)
        y = rng.normal(size=(samples, 3))
        y *= radius * rng.uniform(0, 1, size=(samples, 1)) ** (1 / 3) / np.linalg.norm(y, axis=1, keepdims=True)
        g, _, _ = metric_expansion(self.curvature, np.vstack([y, np.zeros((1, 3))]))
        return bool(np.linalg.eigvalsh(g).min() > 0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params)}


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _arr(params: dict, key: str, shape, default=None) -> np.ndarray:
    if key not in params:
        if default is None:
            raise InconsistentCurvature(f"missing parameter '{key}'")
        return np.asarray(default, dtype=float)
    a = np.asarray(params[key], dtype=float)
    if a.size != int(np.prod(shape)):
        raise InconsistentCurvature(f"parameter '{key}' must have {int(np.prod(shape))} entries")
    return a.reshape(shape)


_ALLOWED = {
    "flat": set(),
    "constant-curvature": {"kappa"},
    "quadratic-scal": {"dscal", "ric", "dric_perturbation"},
    "user-polynomial": {"riem", "driem", "ric", "dric", "synthetic"},
}


def make_model(kind: str, **params) -> MetricModel:
    """Build a test metric from a kind tag and its parameters.

    * ``flat``: no parameters.
    * ``constant-curvature``: ``kappa``.
    * ``quadratic-scal``: ``dscal`` (required), optional symmetric ``ric`` and an
      optional ``dric_perturbation`` whose Bianchi-compliant, d Scal-free part
      is added to the isotropic derivative data.
    * ``user-polynomial``: either ``riem``/``driem`` or ``ric``/``dric``
      (row-major); ``synthetic=True`` admits data violating contracted Bianchi.
    """
    if kind not in _ALLOWED:
        raise InconsistentCurvature(f"unknown model kind '{kind}'; expected one of {MODEL_KINDS}")
    unknown = set(params) - _ALLOWED[kind]
    if unknown:
        raise InconsistentCurvature(f"unknown parameter(s) for {kind}: {sorted(unknown)}")
    if kind == "flat":
        c = CurvatureData.flat()
    elif kind == "constant-curvature":
        if "kappa" not in params:
            raise InconsistentCurvature("missing parameter 'kappa'")
        c = CurvatureData.from_ricci(2.0 * float(params["kappa"]) * I3)
    elif kind == "quadratic-scal":
        dscal = _arr(params, "dscal", (3,))
        ric = _arr(params, "ric", (3, 3), np.zeros((3, 3)))
        dric = dric_for_scal_gradient(dscal)
        if "dric_perturbation" in params:
            dric = dric + project_compliant(_arr(params, "dric_perturbation", (3, 3, 3)), zero_scal_gradient=True)
        c = CurvatureData.from_ricci(ric, dric)
    else:
        synthetic = bool(params.get("synthetic", False))
        if "riem" in params:
            c = CurvatureData(
                _arr(params, "riem", (3, 3, 3, 3)),
                _arr(params, "driem", (3, 3, 3, 3, 3), np.zeros((3, 3, 3, 3, 3))),
                synthetic=synthetic,
            )
        else:
            c = CurvatureData.from_ricci(
                _arr(params, "ric", (3, 3)), _arr(params, "dric", (3, 3, 3), np.zeros((3, 3, 3))), synthetic
            )
    return MetricModel(kind, c, dict(params))


def load_models(source) -> dict[str, MetricModel]:
    """Read a catalog ``{"models": [{"name", "kind", "params"}, ...]}`` from a path or dict."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source) as fh:
            source = json.load(fh)
    out = {}
    for i, entry in enumerate(source.get("models", [])):
        name = entry.get("name", f"model{i}")
        out[name] = make_model(entry["kind"], **entry.get("params", {}))
    return out


__all__ = [
    "CurvatureData",
    "InconsistentCurvature",
    "MODEL_KINDS",
    "MetricModel",
    "bianchi_defect",
    "christoffel_expansion",
    "christoffel_from_metric",
    "dric_for_scal_gradient",
    "divergence",
    "load_models",
    "make_model",
    "metric_expansion",
    "project_compliant",
    "random_compliant_dric",
    "riemann_from_ricci_3d",
]
