import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecdlab.dynamics import (FieldProvider, IntegrationBlowup, IntegratorConfig,
                             Trajectory, apply_scaling, charge_conjugate,
                             effective_mass, eom_residual, integrate_worldline,
                             lorentz_rhs)
from ecdlab.minkowski import AntisymTensor, minkowski_dot


def constant_e_provider(E=(0.3, 0.0, 0.0)):
    return FieldProvider.constant(np.asarray(AntisymTensor.from_fields(E)))


def test_lorentz_rhs_orthogonal_to_velocity():
    fieldp = constant_e_provider((0.2, -0.4, 0.1))
    gd = np.array([1.2, 0.3, -0.5, 0.2])
    rhs = lorentz_rhs(np.zeros(4), gd, fieldp, q=0.7)
    assert abs(minkowski_dot(rhs, gd)) < 1e-12


def test_constant_field_norm2_conserved():
    fieldp = constant_e_provider()
    cfg = IntegratorConfig(step=1e-3, tolerance=1e-9)
    traj = integrate_worldline(((0, 0, 0, 0), (1, 0, 0, 0)), fieldp, 1.0,
                               (0.0, 10.0), cfg)
    n2 = traj.norm2_samples()
    assert np.abs(n2 - n2[0]).max() < 1e-10


def test_integrator_step_must_divide_span():
    fieldp = FieldProvider.zero()
    cfg = IntegratorConfig(step=0.3)
    with pytest.raises(ValueError):
        integrate_worldline(((0, 0, 0, 0), (1, 0, 0, 0)), fieldp, 0.0,
                            (0.0, 1.0), cfg)


def test_drift_beyond_tolerance_raises():
    fieldp = constant_e_provider((1.0, 0.0, 0.0))
    cfg = IntegratorConfig(step=0.25, tolerance=1e-16)  # coarse step, tiny budget
    with pytest.raises(IntegrationBlowup):
        integrate_worldline(((0, 0, 0, 0), (1, 0, 0, 0)), fieldp, 1.0,
                            (0.0, 5.0), cfg)


def test_effective_mass_classification():
    t = Trajectory.uniform((1.0, 0.0, 0.0, 0.0))
    assert effective_mass(t) == (pytest.approx(1.0), "timelike")
    t = Trajectory.uniform((1.0, 1.0, 0.0, 0.0))
    assert effective_mass(t)[1] == "null"
    t = Trajectory.uniform((0.5, 1.0, 0.0, 0.0))
    m2, kind = effective_mass(t)
    assert kind == "tachyonic" and m2 < 0


@given(lam=st.floats(min_value=0.25, max_value=4.0))
@settings(max_examples=20, deadline=None)
def test_scaling_preserves_worldline_equation(lam):
    """gamma -> lam gamma(s/lam^2) solves the EOM in the scaled field F/lam^2."""
    fieldp = constant_e_provider((0.3, 0.0, 0.1))
    cfg = IntegratorConfig(step=5e-3, tolerance=1e-6)
    traj = integrate_worldline(((0, 0, 0, 0), (1, 0, 0, 0)), fieldp, 1.0,
                               (0.0, 2.0), cfg)
    scaled = apply_scaling(traj, lam)
    F_scaled = np.asarray(fieldp(np.zeros(4))) / lam ** 2
    res = eom_residual(scaled, FieldProvider.constant(F_scaled))
    assert res < 5e-4  # central-difference floor of the sampled worldline


def test_scaling_mass_law():
    fieldp = constant_e_provider()
    cfg = IntegratorConfig(step=1e-2, tolerance=1e-6)
    traj = integrate_worldline(((0, 0, 0, 0), (1, 0, 0, 0)), fieldp, 1.0,
                               (0.0, 1.0), cfg)
    lam = 3.0
    m2, _ = effective_mass(traj)
    m2_scaled, _ = effective_mass(apply_scaling(traj, lam))
    assert m2_scaled == pytest.approx(m2 / lam ** 2, rel=1e-12)


def test_charge_conjugate_traces_same_point_set():
    fieldp = constant_e_provider()
    cfg = IntegratorConfig(step=1e-2, tolerance=1e-6)
    traj = integrate_worldline(((0, 0, 0, 0), (1, 0, 0, 0)), fieldp, 1.0,
                               (0.0, 1.0), cfg)
    conj = charge_conjugate(traj)
    assert np.array_equal(np.sort(conj.gammas, axis=0), np.sort(traj.gammas, axis=0))
    assert effective_mass(conj)[0] == pytest.approx(effective_mass(traj)[0])
    # conjugating twice restores the original samples exactly
    back = charge_conjugate(conj)
    assert np.array_equal(back.s, traj.s)
    assert np.array_equal(back.gammas, traj.gammas)
    assert np.array_equal(back.gamma_dots, traj.gamma_dots)


def test_conjugate_solves_eom_in_flipped_field():
    fieldp = constant_e_provider((0.4, 0.0, 0.0))
    cfg = IntegratorConfig(step=5e-3, tolerance=1e-6)
    traj = integrate_worldline(((0, 0, 0, 0), (1, 0, 0, 0)), fieldp, 1.0,
                               (0.0, 2.0), cfg)
    conj = charge_conjugate(traj)
    flipped = FieldProvider.constant(-np.asarray(fieldp(np.zeros(4))))
    assert eom_residual(conj, flipped) < 5e-4


def test_trajectory_rejects_bad_samples():
    s = np.array([0.0, 1.0, 0.5])
    g = np.zeros((3, 4))
    with pytest.raises(ValueError):
        Trajectory(s, g, g)


def test_state_at_interpolates():
    traj = Trajectory.uniform((1.0, 0.5, 0.0, 0.0), s_span=(-1.0, 1.0), n=5)
    gamma, gdot = traj.state_at(0.25)
    assert np.allclose(gamma, [0.25, 0.125, 0.0, 0.0])
    assert np.allclose(gdot, [1.0, 0.5, 0.0, 0.0])
