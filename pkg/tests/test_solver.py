import json
import math

import numpy as np
import pytest

from cmcbubble.bubble import SimpleBubble, sample_bubbles
from cmcbubble.curvature import make_model
from cmcbubble.solver import (
    DriftTable,
    ExpansionDomainError,
    NonConvergence,
    SolveConfig,
    assemble_jacobian,
    assemble_residual,
    default_initial,
    drift_experiment,
    force_projection,
    newton_solve,
)
from cmcbubble.solver import _residual_parts

RIC = [[0.3, 0.1, 0.0], [0.1, -0.2, 0.0], [0.0, 0.0, 0.5]]
SCAL = make_model("quadratic-scal", dscal=[1.0, 0.0, 0.0], ric=RIC)
FLAT = make_model("flat")


def test_config_validation():
    for bad in ({"grid_n": 32}, {"eps": -1.0}, {"newton_tol": 0.0}, {"damping": 1.5},
                {"boundary": "dirichlet-zero"}, {"L": 0.0}):
        kw = {"L": 4.0, "grid_n": 65, "eps": 0.1, "metric": FLAT}
        kw.update(bad)
        with pytest.raises(ValueError):
            SolveConfig(**kw)


def test_config_serializes():
    d = SolveConfig(4.0, 65, 0.1, SCAL).to_dict()
    assert json.loads(json.dumps(d))["metric"]["kind"] == "quadratic-scal"


def test_flat_residual_is_the_bubble_residual():
    from cmcbubble.bubble import hbubble_residual

    cfg = SolveConfig(4.0, 65, 0.0, FLAT)
    f = sample_bubbles([SimpleBubble.identity()], 4.0, 65)
    res = assemble_residual(f, cfg)
    assert res.half_width == pytest.approx(4.0 - cfg.h)
    assert np.allclose(res.values, hbubble_residual(f).residual)


def test_jacobian_matches_finite_differences():
    cfg = SolveConfig(4.0, 65, 0.1, SCAL)
    v = default_initial(cfg).values.copy()
    rng = np.random.default_rng(0)
    d = np.zeros_like(v)
    d[1:-1, 1:-1] = rng.normal(size=(63, 63, 3))
    J = assemble_jacobian(v, cfg.h, cfg)
    t = 1e-6
    fd = (_residual_parts(v + t * d, cfg.h, cfg)[0] - _residual_parts(v - t * d, cfg.h, cfg)[0]) / (2 * t)
    lin = (J @ d[1:-1, 1:-1].ravel()).reshape(fd.shape)
    assert np.abs(lin - fd).max() < 1e-6 * np.abs(fd).max()


def test_flat_newton_converges_quadratically():
    cfg = SolveConfig(4.0, 65, 0.0, FLAT)
    out = newton_solve(cfg)
    assert out.converged and out.iterations <= 4
    h = out.residual_history
    for k in range(1, len(h) - 1):
        assert h[k + 1] <= 10 * h[k] ** 2 / h[0] + 1e-12 or h[k + 1] < cfg.newton_tol
    assert np.abs(out.center[:2]).max() < 1e-12  # the truncated chart only biases the vertical component


def test_curved_newton_converges_and_reports_diagnostics():
    cfg = SolveConfig(4.0, 65, 0.08, SCAL)
    out = newton_solve(cfg)
    assert out.converged and out.final_residual <= cfg.newton_tol
    assert out.diagnostics is not None and out.diagnostics.estim_product > 1.5
    assert out.conformality_defect < 0.1


def test_expansion_domain_is_enforced():
    cfg = SolveConfig(4.0, 65, 1.0, SCAL)
    with pytest.raises(ExpansionDomainError):
        newton_solve(cfg)


def test_nonconvergence_is_reported():
    cfg = SolveConfig(4.0, 65, 0.05, SCAL, newton_max_iter=1, newton_tol=1e-14)
    out = newton_solve(cfg, diagnostics=False)
    assert not out.converged and out.iterations == 1
    with pytest.raises(NonConvergence):
        newton_solve(cfg, diagnostics=False, raise_on_failure=True)


def test_initial_grid_must_match():
    cfg = SolveConfig(4.0, 65, 0.0, FLAT)
    with pytest.raises(ValueError):
        newton_solve(cfg, sample_bubbles([SimpleBubble.identity()], 4.0, 67))


def test_force_vanishes_in_flat_space():
    cfg = SolveConfig(4.0, 65, 0.1, FLAT)
    assert np.abs(force_projection(default_initial(cfg), cfg)).max() < 1e-14


def test_translation_force_scales_like_eps_cubed():
    forces = []
    for eps in (0.08, 0.04):
        cfg = SolveConfig(5.0, 97, eps, SCAL)
        forces.append(force_projection(default_initial(cfg), cfg, fields="translation")[0])
    assert forces[0] / forces[1] == pytest.approx(8.0, rel=0.05)
    assert forces[1] / 0.04**3 == pytest.approx(4 * math.pi / 30, rel=0.05)


def test_drift_table_outputs():
    tab = drift_experiment(SCAL, [0.08, 0.04], L=4.0, grid_n=65, solve=False)
    assert isinstance(tab, DriftTable) and len(tab.rows) == 2
    lines = tab.to_csv().strip().splitlines()
    assert lines[0].split(",") == ["eps", "center_x", "center_y", "center_z", "force_1", "force_2", "force_3",
                                   "residual", "iterations"]
    assert len(lines) == 3
    m = json.loads(tab.manifest(note="x"))
    assert m["complete"] and m["note"] == "x" and len(m["rows"]) == 2
    assert tab.scaled_forces().shape == (2, 3)
    assert len(tab.ratios()) == 1


def test_drift_arguments_validated():
    with pytest.raises(ValueError):
        drift_experiment(SCAL, [0.04, 0.08], L=4.0, grid_n=65, solve=False)
    with pytest.raises(ValueError):
        drift_experiment(SCAL, [0.08], L=4.0, grid_n=65, projection="radial", solve=False)


def test_bubble_is_a_fixed_point_up_to_truncation():
    cfg = SolveConfig(6.0, 129, 0.0, FLAT)
    out = newton_solve(cfg, diagnostics=False)
    h = out.residual_history
    assert h[0] < 0.1  # the exact bubble solves the discrete system to O(h^2)
    assert all(b < a for a, b in zip(h, h[1:]))
    assert all(h[k + 1] < h[k] ** 2 / h[0] * 2 for k in range(1, len(h) - 1))
    # three steps to reach 1e-9 from an O(h^2) start; two reach the truncation level
    assert out.iterations == 3
    loose = newton_solve(SolveConfig(6.0, 129, 0.0, FLAT, newton_tol=1e-4), diagnostics=False)
    assert loose.converged and loose.iterations <= 2


def test_perturbed_start_returns_to_the_discrete_bubble():
    from cmcbubble.bubble import omega_jet

    cfg = SolveConfig(6.0, 97, 0.0, FLAT)
    ref = newton_solve(cfg, diagnostics=False)
    f0 = default_initial(cfg)
    p = f0.points()
    r2 = (p**2).sum(-1)
    j = omega_jet(p)
    normal = j.cross / np.linalg.norm(j.cross, axis=-1, keepdims=True)
    bump = (np.exp(-r2 / 4) * np.clip(1 - r2 / 36, 0, None) ** 2)[..., None]
    pert = 0.01 * bump * (np.sin(p[..., :1]) * normal + 0.5 * np.cos(p[..., 1:]) * j.wx)
    out = newton_solve(cfg, f0.with_values(f0.values + pert), diagnostics=False)
    assert out.converged
    assert np.abs(out.field.values - ref.field.values).max() < 1e-4


def test_constant_curvature_solve_is_nearly_conformal():
    cc = make_model("constant-curvature", kappa=1.0)
    flat = newton_solve(SolveConfig(5.0, 97, 0.0, FLAT), diagnostics=False)
    out = newton_solve(SolveConfig(5.0, 97, 0.05, cc))
    assert out.converged
    assert all(b <= a for a, b in zip(out.residual_history, out.residual_history[1:]))
    assert out.conformality_defect <= flat.conformality_defect + 10 * 0.05**3


def test_force_sign_flips_with_the_gradient():
    plus = make_model("quadratic-scal", dscal=[1.0, 0.0, 0.0], ric=RIC)
    minus = make_model("quadratic-scal", dscal=[-1.0, 0.0, 0.0], ric=RIC)
    for fields in ("kernel", "translation"):
        fp, fm = (force_projection(default_initial(SolveConfig(4.0, 65, 0.05, m)), SolveConfig(4.0, 65, 0.05, m),
                                   fields=fields) for m in (plus, minus))
        # the ric-only part is even in dscal; the derivative part flips sign
        odd = 0.5 * (fp - fm)
        assert abs(odd[0]) > 0 and np.sign(fp[0] - fm[0]) == np.sign(odd[0])
        assert np.allclose(0.5 * (fp + fm), force_projection(
            default_initial(SolveConfig(4.0, 65, 0.05, make_model("quadratic-scal", dscal=[0, 0, 0], ric=RIC))),
            SolveConfig(4.0, 65, 0.05, make_model("quadratic-scal", dscal=[0, 0, 0], ric=RIC)), fields=fields),
            atol=1e-12)


def test_drift_rows_satisfy_the_diameter_bound():
    tab = drift_experiment(SCAL, [0.08, 0.04], L=4.0, grid_n=65)
    for r in tab.rows:
        assert r.converged
        assert 1 / 5 <= r.estim_product <= 5
