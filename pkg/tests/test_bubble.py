import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_rotation
from cmcbubble.bubble import (
    GRADIENT_BOUND,
    RationalMap,
    ReducibleMap,
    SimpleBubble,
    bubble_energy,
    bubble_gradient,
    energy_tail_bound,
    eval_bubble,
    hbubble_residual,
    omega,
    omega_jet,
    sample_bubbles,
)

coords = st.floats(-50, 50, allow_nan=False)


@given(coords, coords)
def test_omega_lands_on_unit_sphere(x, y):
    assert np.linalg.norm(omega([x, y])) == pytest.approx(1.0, abs=1e-13)


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_omega_is_conformal_and_solves_flat_system(x, y):
    j = omega_jet([x, y])
    assert abs(j.wx @ j.wy) < 1e-13
    assert j.wx @ j.wx == pytest.approx(j.wy @ j.wy, abs=1e-13)
    assert j.grad_sq == pytest.approx(j.wx @ j.wx + j.wy @ j.wy, abs=1e-13)
    # wedge is -4 omega / (1+r^2)^2, so the equation Lap w = 2 w_x ^ w_y carries the sign below
    assert np.allclose(j.cross, -4 * j.value / (1 + x * x + y * y) ** 2, atol=1e-13)


def test_omega_at_origin_and_infinity():
    assert np.allclose(omega([0.0, 0.0]), [0, 0, -1])
    assert np.allclose(omega([1e8, 0.0]), [0, 0, 1], atol=1e-7)
    assert np.allclose(omega_jet([0.0, 0.0]).cross, [0, 0, 4])


def test_complex_points_accepted():
    assert np.allclose(omega(1 + 2j), omega([1.0, 2.0]))


def test_derivatives_match_differences(rng):
    z = rng.normal(size=(20, 2))
    j = omega_jet(z)
    h = 1e-6
    dx = (omega(z + [h, 0]) - omega(z - [h, 0])) / (2 * h)
    dy = (omega(z + [0, h]) - omega(z - [0, h])) / (2 * h)
    assert np.allclose(j.wx, dx, atol=1e-8) and np.allclose(j.wy, dy, atol=1e-8)


def test_gradient_bound_attained_at_origin():
    z = np.random.default_rng(0).normal(size=(500, 2))
    assert np.sqrt(omega_jet(z).grad_sq).max() <= GRADIENT_BOUND
    assert math.sqrt(omega_jet([0.0, 0.0]).grad_sq) == pytest.approx(GRADIENT_BOUND)


def test_bubble_validation():
    with pytest.raises(ValueError):
        SimpleBubble(lam=0.0)
    with pytest.raises(ValueError):
        SimpleBubble(rot=np.diag([1.0, 1.0, -1.0]))


@given(st.integers(0, 10_000))
def test_bubble_gradient_matches_differences(seed):
    rng = np.random.default_rng(seed)
    b = SimpleBubble(rng.normal(size=2), float(rng.uniform(0.2, 3)), float(rng.uniform(0, 6)),
                     random_rotation(rng), rng.normal(size=3))
    z = rng.normal(size=(5, 2)) * 2
    fx, fy = bubble_gradient(b, z)
    h = 1e-6
    assert np.allclose(fx, (eval_bubble(b, z + [h, 0]) - eval_bubble(b, z - [h, 0])) / (2 * h), atol=1e-6)
    assert np.allclose(fy, (eval_bubble(b, z + [0, h]) - eval_bubble(b, z - [0, h])) / (2 * h), atol=1e-6)


def test_bubble_dict_roundtrip(rng):
    b = SimpleBubble([1.0, 2.0], 0.5, 1.0, random_rotation(rng), [0.0, 1.0, 2.0])
    c = SimpleBubble.from_dict(b.to_dict())
    z = rng.normal(size=(10, 2))
    assert np.allclose(eval_bubble(b, z), eval_bubble(c, z))


@pytest.mark.parametrize("P,Q,k", [([0, 1], [1], 1), ([0, 0, 1], [1, 0.3], 2), ([1, 0, 0, 1], [0, 1], 3)])
def test_energy_quantized(P, Q, k):
    e = bubble_energy(RationalMap(P, Q))
    assert e == pytest.approx(8 * math.pi * k, rel=1e-6)


def test_energy_of_rescaled_map_unchanged():
    assert bubble_energy(RationalMap([0, 0.05], [1])) == pytest.approx(8 * math.pi, rel=1e-6)


def test_reducible_map_rejected():
    with pytest.raises(ReducibleMap):
        RationalMap([-1, 1], [-1, 1])  # (z-1)/(z-1)


def test_constant_map_rejected():
    with pytest.raises(ValueError):
        RationalMap([1], [1])


def test_energy_rejects_other_inputs():
    with pytest.raises(TypeError):
        bubble_energy(lambda z: z)


def test_tail_bound_dominates_measured_tail():
    R = 10.0
    r = RationalMap([0, 1], [1])
    tail = 8 * math.pi / (1 + R * R)  # energy of omega outside |z| = R
    assert tail <= energy_tail_bound(r.degree, R)


def test_sphere_map_handles_poles():
    r = RationalMap([1], [0, 1])  # 1/z
    assert np.allclose(r.sphere_map([0.0, 0.0]), [0, 0, 1])


def test_discrete_residual_is_second_order():
    b = SimpleBubble.identity()
    r1 = hbubble_residual(sample_bubbles([b], 4.0, 65)).max
    r2 = hbubble_residual(sample_bubbles([b], 4.0, 129)).max
    assert 3.5 < r1 / r2 < 4.5
    rep = hbubble_residual(sample_bubbles([b], 4.0, 129))
    assert rep.defect_max("conformal_xy") < 1e-2


def test_residual_needs_vector_field():
    from cmcbubble.grid import Field2D

    with pytest.raises(ValueError):
        hbubble_residual(Field2D(np.zeros((5, 5)), 1.0))
