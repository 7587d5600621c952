import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cmcbubble.bubble import SimpleBubble, omega, omega_jet
from cmcbubble.grid import Field2D
from cmcbubble.linearized import (
    FrameDegenerate,
    KernelElement,
    NoSpectralGap,
    NotLinearizedSolution,
    frame_decompose,
    kernel_dimension,
    plin_check,
    potential,
    psi0,
    psi1,
    psi2,
    radial_mode_check,
    schroedinger_residual,
)


def jacobi(fn, z, h=1e-3):
    """Continuous -Lap psi - V psi by a fourth-order stencil."""
    e = [np.array([h, 0.0]), np.array([0.0, h])]
    lap = 0.0
    for d in e:
        lap = lap + (-fn(z + 2 * d) + 16 * fn(z + d) - 30 * fn(z) + 16 * fn(z - d) - fn(z - 2 * d)) / (12 * h * h)
    return -lap - potential(z) * fn(z)


@given(st.floats(-4, 4), st.floats(-4, 4))
def test_kernel_functions_solve_the_jacobi_equation(x, y):
    z = np.array([x, y])
    for fn in (psi0, psi1, psi2):
        assert abs(jacobi(fn, z)) < 1e-6


def test_kernel_element_sampling_and_residual():
    k = KernelElement("psi1")
    r1 = schroedinger_residual(k.sample(4.0, 65)).max
    r2 = schroedinger_residual(k.sample(4.0, 129)).max
    assert r1 / r2 == pytest.approx(4.0, rel=0.1)
    with pytest.raises(ValueError):
        KernelElement("psi3")
    with pytest.raises(ValueError):
        schroedinger_residual(Field2D(np.zeros((5, 5, 3)), 1.0))


def dilation(p):
    j = omega_jet(p)
    return p[..., :1] * j.wx + p[..., 1:] * j.wy


def rotation(p):
    return np.cross([0.3, -0.5, 1.0], omega(p))


@pytest.mark.parametrize("fn", [dilation, rotation, lambda p: -omega_jet(p).wx])
def test_plin_relations_hold_for_infinitesimal_motions(fn):
    r = Field2D.from_function(fn, 3.0, 121)
    rep = plin_check(r, SimpleBubble.identity(), strict=True)
    assert rep.ok, rep.relations
    assert rep.linearized_residual < 50 * r.h**2


def test_plin_flags_non_solutions():
    r = Field2D.from_function(lambda p: np.stack([p[..., 0] ** 2, p[..., 1], 0 * p[..., 0]], -1), 3.0, 61)
    rep = plin_check(r, SimpleBubble.identity())
    assert not rep.ok
    with pytest.raises(NotLinearizedSolution):
        plin_check(r, SimpleBubble.identity(), strict=True)


def test_frame_reconstruction_is_exact():
    rng = np.random.default_rng(0)
    r = Field2D(rng.normal(size=(9, 9, 3)), 1.0)
    co = frame_decompose(r, SimpleBubble.identity())
    assert co.reconstruction_error < 1e-12


def test_frame_degenerates_far_out():
    r = Field2D(np.zeros((9, 9, 3)), 1.0, origin=(1e6, 0.0))
    with pytest.raises(FrameDegenerate):
        frame_decompose(r, SimpleBubble.identity())


def test_kernel_dimension_small_grid():
    ks = kernel_dimension(10.0, 128)
    assert ks.dimension == 3
    assert ks.gap >= 10
    assert max(ks.relative_errors.values()) < 0.1


def test_kernel_dimension_validation():
    with pytest.raises(ValueError):
        kernel_dimension(10.0, 32)
    with pytest.raises(NoSpectralGap):
        kernel_dimension(10.0, 128, gap_threshold=1e6)


def test_radial_modes():
    two = radial_mode_check(2)
    one = radial_mode_check(1)
    assert two.growth_ratio > 0.1  # k = 2 has no decaying solution
    assert two.min_rayleigh == pytest.approx(4.0, rel=0.05)
    assert abs(one.growth_ratio) < 1e-2  # psi1 ~ 1/r decays
    assert abs(one.min_rayleigh) < 0.05
