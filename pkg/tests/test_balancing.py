import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_rotation
from cmcbubble.balancing import (
    SphereQuadrature,
    balancing_closed_form,
    balancing_constant,
    balancing_contracted,
    balancing_integral,
    cubic_source,
    exact_moment,
    kernel_fields,
    moment_certificate,
    odd_moment_defect,
    source_projection,
    sphere_moments,
    translation_closed_form,
    translation_constant,
    translation_contracted,
)
from cmcbubble.bubble import omega, omega_jet
from cmcbubble.corrected import NonUnitVector
from cmcbubble.curvature import CurvatureData, dric_for_scal_gradient, random_compliant_dric

Q = SphereQuadrature.product()
seeds = st.integers(0, 100_000)


def model(seed, dscal_free=False):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(3, 3))
    dric = random_compliant_dric(rng)
    if dscal_free:
        from cmcbubble.curvature import project_compliant

        dric = project_compliant(dric, zero_scal_gradient=True)
    return CurvatureData.from_ricci(A + A.T, dric)


def test_product_rule_is_a_valid_quadrature():
    assert Q.weights.sum() == pytest.approx(4 * math.pi)
    assert moment_certificate(Q) < 1e-13
    assert odd_moment_defect(Q) < 1e-13
    with pytest.raises(ValueError):
        Q.moment(12)


def test_named_moments():
    second, fourth = sphere_moments(Q)
    assert second[0, 0] == pytest.approx(4 * math.pi / 3, abs=1e-12)
    assert fourth[0, 0, 1, 1] == pytest.approx(4 * math.pi / 15, abs=1e-12)
    assert fourth[2, 2, 2, 2] == pytest.approx(4 * math.pi / 5, abs=1e-12)
    assert exact_moment(6)[0, 0, 1, 1, 2, 2] == pytest.approx(4 * math.pi / 105)


@given(seeds)
def test_rule_integrates_random_low_degree_polynomials(seed):
    rng = np.random.default_rng(seed)
    T = rng.normal(size=(3,) * 4)
    assert np.einsum("abcd,abcd->", exact_moment(4), T) == pytest.approx(
        Q.integrate(np.einsum("za,zb,zc,zd,abcd->z", *[Q.nodes] * 4, T)), abs=1e-11)


def test_quadrature_validation():
    with pytest.raises(ValueError):
        SphereQuadrature(np.array([[1.0, 0.0, 0.0]]), np.array([4 * math.pi]), 3)
    with pytest.raises(ValueError):
        SphereQuadrature(np.array([[2.0, 0.0, 0.0]]), np.array([4 * math.pi]), 7)
    with pytest.raises(ValueError):
        SphereQuadrature(np.array([[1.0, 0.0, 0.0]]), np.array([1.0]), 7)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_kernel_fields_are_pushforwards(x, y):
    j = omega_jet([x, y])
    Y = kernel_fields(omega([x, y]))
    assert np.allclose(Y[0], j.wx, atol=1e-13)
    assert np.allclose(Y[1], j.wy, atol=1e-13)
    assert np.allclose(Y[2], x * j.wx + y * j.wy, atol=1e-13)


def test_kernel_fields_are_tangent_and_need_unit_vectors():
    Y = kernel_fields(Q.nodes)
    assert np.abs(np.einsum("alj,aj->al", Y, Q.nodes)).max() < 1e-14
    with pytest.raises(NonUnitVector):
        kernel_fields([1.0, 1.0, 0.0])


@given(seeds)
def test_quadrature_agrees_with_exact_contraction(seed):
    c = model(seed)
    assert np.allclose(balancing_integral(c), balancing_contracted(c), atol=1e-12)
    assert np.allclose(source_projection(c, fields="translation"), translation_contracted(c), atol=1e-12)


def test_displayed_integral_has_zero_trace_coefficients():
    k = balancing_constant()
    assert abs(k.alpha) < 1e-13 and abs(k.beta) < 1e-13 and k.fit_residual < 1e-13
    c = model(7)
    assert np.abs(balancing_integral(c)).max() < 1e-12 * np.abs(c.driem).max()


def test_translation_coefficients_closed_form():
    k = translation_constant()
    assert k.alpha == pytest.approx(2 * math.pi / 15, abs=1e-13)
    assert k.beta == pytest.approx(math.pi / 15, abs=1e-13)
    assert k.c0 == pytest.approx(4 * math.pi / 15, abs=1e-13)
    assert k.fit_residual < 1e-13


@given(seeds)
def test_translation_pairing_is_trace_determined(seed):
    c = model(seed)
    assert np.allclose(translation_contracted(c), translation_closed_form(c), atol=1e-12)
    assert np.allclose(balancing_contracted(c), balancing_closed_form(c), atol=1e-12)


@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_translation_force_is_parallel_to_scal_gradient(s):
    c = CurvatureData.from_ricci(np.zeros((3, 3)), dric_for_scal_gradient(s))
    assert np.allclose(translation_contracted(c), (2 * math.pi / 15) * np.array(s), atol=1e-12)


@given(seeds)
def test_translation_force_vanishes_without_scal_gradient(seed):
    c = model(seed, dscal_free=True)
    assert np.abs(translation_contracted(c)).max() < 1e-12


@given(seeds)
def test_projections_are_rotation_equivariant(seed):
    rng = np.random.default_rng(seed)
    c = model(seed)
    R = random_rotation(rng)
    r = c.rotated(R)
    for fields in ("translation",):
        assert np.allclose(source_projection(r, fields=fields), R @ source_projection(c, fields=fields), atol=1e-11)
    assert np.allclose(balancing_integral(r), R @ balancing_integral(c), atol=1e-11)


def test_kernel_projection_of_cubic_source_vanishes():
    for seed in range(5):
        assert np.abs(source_projection(model(seed), fields="kernel")).max() < 1e-12


def test_cubic_source_is_even_in_y_at_zero_shift():
    c = model(3)
    y = Q.nodes
    assert np.allclose(cubic_source(c, -y), cubic_source(c, y), atol=1e-13)


def test_unknown_projection():
    with pytest.raises(ValueError):
        source_projection(model(0), fields="radial")


def test_constant_curvature_gives_no_force():
    from cmcbubble.curvature import make_model

    c = make_model("constant-curvature", kappa=0.8).curvature
    assert np.abs(balancing_integral(c)).max() == 0.0
    assert np.abs(source_projection(c, fields="translation")).max() < 1e-14


@given(seeds)
def test_projections_do_not_depend_on_the_shift(seed):
    c = model(seed)
    p = 0.5 * np.random.default_rng(seed).normal(size=3)
    for fields in ("kernel", "translation"):
        assert np.allclose(source_projection(c, p_shift=p, fields=fields), source_projection(c, fields=fields),
                           atol=1e-12)


def test_riemann_derivative_is_fixed_by_its_traces_in_three_dimensions():
    # no trace-free (Weyl-type) part exists: equal dric forces equal driem
    c = model(4)
    again = CurvatureData.from_ricci(c.ric, c.dric)
    assert np.allclose(again.driem, c.driem, atol=1e-14)
