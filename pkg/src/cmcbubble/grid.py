"""Uniform square grids, finite-difference stencils and residual reports.

A :class:`Field2D` stores samples ``values[i, j]`` at the chart point
``(origin[0] + x_i, origin[1] + y_j)`` with ``x_i = y_i = linspace(-L, L, n)``.
Vector fields carry a trailing component axis.  Optional exact derivative
channels ``dx``/``dy`` (same shape as ``values``) let synthetic fields bypass
finite differencing where an analytic gradient is known.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

MIN_POINTS = 5


class GridTooSmall(ValueError):
    """Raised when a grid cannot support the requested stencil."""


@dataclass(frozen=True, eq=False)
class Field2D:
    values: np.ndarray
    half_width: float
    origin: tuple[float, float] = (0.0, 0.0)
    dx: np.ndarray | None = None
    dy: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if v.ndim not in (2, 3) or v.shape[0] != v.shape[1]:
            raise ValueError(f"values must be (n, n) or (n, n, C), got {v.shape}")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        for name in ("dx", "dy"):
            d = getattr(self, name)
            if d is not None:
                d = np.asarray(d, dtype=float)
                if d.shape != v.shape:
                    raise ValueError(f"{name} shape {d.shape} does not match values {v.shape}")
                object.__setattr__(self, name, d)

    # -- geometry ---------------------------------------------------------
    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / (self.n - 1)

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == 2

    @property
    def has_exact_gradient(self) -> bool:
        return self.dx is not None and self.dy is not None

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n)

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        a = self.axis()
        X, Y = np.meshgrid(a + self.origin[0], a + self.origin[1], indexing="ij")
        return X, Y

    def points(self) -> np.ndarray:
        X, Y = self.coords()
        return np.stack([X, Y], axis=-1)

    def interior_points(self) -> np.ndarray:
        return self.points()[1:-1, 1:-1]

    # -- construction -----------------------------------------------------
    @classmethod
    def from_function(
        cls,
        fn: Callable[[np.ndarray], np.ndarray],
        half_width: float,
        n: int,
        origin: tuple[float, float] = (0.0, 0.0),
        grad: Callable[[np.ndarray], tuple[np.ndarray, np.ndarray]] | None = None,
    ) -> "Field2D":
        """Sample ``fn`` (points of shape (..., 2) -> values) on the grid.

        If ``grad`` is supplied it must return the exact ``(d/dx, d/dy)`` pair
        and is stored as derivative channels.
        """
        a = np.linspace(-half_width, half_width, n)
        xs, ys = a + origin[0], a + origin[1]
        step = max(1, 250_000 // n)  # row blocks keep temporaries small on fine grids
        vals, dxs, dys = [], [], []
        for i0 in range(0, n, step):
            X, Y = np.meshgrid(xs[i0:i0 + step], ys, indexing="ij")
            pts = np.stack([X, Y], axis=-1)
            vals.append(np.asarray(fn(pts), dtype=float))
            if grad is not None:
                gx, gy = grad(pts)
                dxs.append(np.asarray(gx, dtype=float))
                dys.append(np.asarray(gy, dtype=float))
        dx = np.concatenate(dxs) if grad is not None else None
        dy = np.concatenate(dys) if grad is not None else None
        return cls(np.concatenate(vals), half_width, origin, dx, dy)

    def with_values(self, values: np.ndarray, dx=None, dy=None) -> "Field2D":
        return Field2D(values, self.half_width, self.origin, dx, dy)

    def __sub__(self, other: "Field2D") -> "Field2D":
        self._check_same_grid(other)
        dx = dy = None
        if self.has_exact_gradient and other.has_exact_gradient:
            dx, dy = self.dx - other.dx, self.dy - other.dy
        return self.with_values(self.values - other.values, dx, dy)

    def __add__(self, other: "Field2D") -> "Field2D":
        self._check_same_grid(other)
        dx = dy = None
        if self.has_exact_gradient and other.has_exact_gradient:
            dx, dy = self.dx + other.dx, self.dy + other.dy
        return self.with_values(self.values + other.values, dx, dy)

    def _check_same_grid(self, other: "Field2D"):
        if (other.n, other.half_width, other.origin) != (self.n, self.half_width, self.origin):
            raise ValueError("fields live on different grids")

    # -- derivatives ------------------------------------------------------
    def require(self, points: int = MIN_POINTS):
        if self.n < points:
            raise GridTooSmall(f"grid has {self.n} points per axis, need at least {points}")

    def gradient(self) -> tuple[np.ndarray, np.ndarray]:
        """Interior gradient: exact channels if present, else central differences."""
        self.require(3)
        if self.has_exact_gradient:
            return self.dx[1:-1, 1:-1], self.dy[1:-1, 1:-1]
        return central_gradient(self.values, self.h)

    def full_gradient(self) -> tuple[np.ndarray, np.ndarray]:
        """Gradient on every node (one-sided second-order differences at the edges)."""
        if self.has_exact_gradient:
            return self.dx, self.dy
        return (np.gradient(self.values, self.h, axis=0, edge_order=2),
                np.gradient(self.values, self.h, axis=1, edge_order=2))

    def laplacian(self) -> np.ndarray:
        self.require(3)
        return laplacian5(self.values, self.h)

    def dirichlet_energy(self) -> float:
        """Trapezoidal quadrature of |grad f|^2 over the whole square."""
        fx, fy = self.full_gradient()
        dens = fx**2 + fy**2
        if dens.ndim == 3:
            dens = dens.sum(axis=-1)
        return float(trapezoid2(dens, self.h))

    # -- binary snapshots -------------------------------------------------
    def to_bytes(self) -> bytes:
        """Little-endian doubles, component-major, rows of constant y, x fastest."""
        v = self.values if self.values.ndim == 3 else self.values[..., None]
        return np.ascontiguousarray(np.transpose(v, (2, 1, 0))).astype("<f8").tobytes()

    def sidecar(self) -> dict:
        return {
            "grid_n": self.n,
            "L": self.half_width,
            "origin": list(self.origin),
            "components": 1 if self.is_scalar else self.values.shape[2],
            "order": "component-major, x-fastest",
            "dtype": "float64-le",
        }

    @classmethod
    def from_bytes(cls, data: bytes, sidecar: dict) -> "Field2D":
        n = int(sidecar["grid_n"])
        comps = int(sidecar.get("components", 3))
        arr = np.frombuffer(data, dtype="<f8")
        if arr.size != comps * n * n:
            raise ValueError(f"snapshot holds {arr.size} doubles, expected {comps * n * n}")
        v = np.transpose(arr.reshape(comps, n, n), (2, 1, 0)).astype(float)
        if comps == 1:
            v = v[..., 0]
        return cls(v, float(sidecar["L"]), tuple(sidecar.get("origin", (0.0, 0.0))))

    def save(self, path: str):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        with open(path + ".json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=2)


def central_gradient(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    fx = (values[2:, 1:-1] - values[:-2, 1:-1]) / (2 * h)
    fy = (values[1:-1, 2:] - values[1:-1, :-2]) / (2 * h)
    return fx, fy


def laplacian5(values: np.ndarray, h: float) -> np.ndarray:
    """Five-point sum of second derivatives on interior nodes."""
    return (
        values[2:, 1:-1] + values[:-2, 1:-1] + values[1:-1, 2:] + values[1:-1, :-2]
        - 4.0 * values[1:-1, 1:-1]
    ) / h**2


def trapezoid2(values: np.ndarray, h: float) -> float:
    w = np.ones(values.shape[0])
    w[0] = w[-1] = 0.5
    W = np.outer(w, w)
    if values.ndim == 3:
        W = W[..., None]
    return float(np.sum(W * values) * h * h)


def pointwise_norm(a: np.ndarray) -> np.ndarray:
    return np.linalg.norm(a, axis=-1) if a.ndim == 3 else np.abs(a)


def max_norm(a: np.ndarray) -> float:
    return float(pointwise_norm(a).max()) if a.size else 0.0


def l2_norm(a: np.ndarray, h: float) -> float:
    return float(np.sqrt(h * h * np.sum(a**2)))


@dataclass
class ResidualReport:
    """Named defect fields on the interior grid together with their norms."""

    residual: np.ndarray
    h: float
    defects: dict[str, np.ndarray] = field(default_factory=dict)
    extra: dict[str, float] = field(default_factory=dict)

    @property
    def max(self) -> float:
        return max_norm(self.residual)

    @property
    def l2(self) -> float:
        return l2_norm(self.residual, self.h)

    def defect_max(self, name: str) -> float:
        return max_norm(self.defects[name])

    def defect_l2(self, name: str) -> float:
        return l2_norm(self.defects[name], self.h)

    def norms(self) -> dict[str, float]:
        out = {"residual_max": self.max, "residual_l2": self.l2}
        for k in self.defects:
            out[f"{k}_max"] = self.defect_max(k)
            out[f"{k}_l2"] = self.defect_l2(k)
        out.update(self.extra)
        return out

    def __sub__(self, other: "ResidualReport") -> "ResidualReport":
        """Pointwise difference, used to remove a discretization floor."""
        return ResidualReport(
            self.residual - other.residual,
            self.h,
            {k: self.defects[k] - other.defects[k] for k in self.defects if k in other.defects},
        )
