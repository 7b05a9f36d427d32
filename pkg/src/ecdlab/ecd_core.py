"""The central extended-charge system: wave evaluation, calibration, guiding.

An extended charge is a pair {phi, gamma}: a worldline plus a complex wave
tied to it by two conditions,

* the windowed integral equation
      phi(x, s) = (i / N) int ds' G(x, gamma_s'; s - s') phi(gamma_s', s') U(eps; s - s'),
  where U(eps; sigma) = theta(sigma - eps) - theta(-sigma - eps) excises the
  |sigma| < eps neighbourhood of the propagator singularity, and
* the surfing condition Re[d_mu phi phi*] = 0 on the worldline: the particle
  rides an extremum of |phi|^2.

The normalization N = -1 / (2 pi^2 eps) makes the free plane-phase ansatz
self-consistent up to O(eps).  Differentiating the surfing condition along s
turns it into the guiding ODE gamma_dot = -H^{-1} f with H the spatial-time
Hessian of |phi|^2 and f its mixed s-derivative; a singular H is a physical
outcome ("violent event") and is reported as data, never raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import warnings

import numpy as np
from scipy.integrate import IntegrationWarning, quad

from .minkowski import METRIC, as_four, minkowski_dot
from .dynamics import Trajectory
from .propagators import (constant_field_action_provider, constant_field_van_vleck,
                          free_propagator, _pref)


@dataclass(frozen=True)
class EpsilonCalibration:
    """The (eps, N) pair plus the s-window; s_max truncates the s'-integral.

    s_max carries scaling dimension 2 (like s and eps), so a scale transform
    multiplies it by lambda^2 along with eps; the relative truncation error of
    the free integrand is exactly eps / s_max.
    """

    epsilon: float
    s_max: float = 50.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.s_max <= self.epsilon:
            raise ValueError("s_max must exceed epsilon")

    @property
    def N(self) -> float:
        return -1.0 / (2.0 * np.pi ** 2 * self.epsilon)

    def window(self, sigma: float) -> float:
        """U(eps; sigma) = theta(sigma - eps) - theta(-sigma - eps)."""
        if sigma > self.epsilon:
            return 1.0
        if sigma < -self.epsilon:
            return -1.0
        return 0.0


def calibrate(epsilon: float, s_max: float = 50.0) -> EpsilonCalibration:
    return EpsilonCalibration(epsilon, s_max)


@dataclass(frozen=True)
class BoundaryAnsatz:
    """phi restricted to the worldline: s -> phi(gamma_s, s).

    kind 'plane-phase' is C e^{i u^2 s / 2} (the free ansatz); 'action-phase'
    is C e^{i I(s) / hbar} with I the classical action accumulated along the
    trajectory; 'tabulated' wraps an arbitrary callable.
    """

    value: Callable[[float], complex]
    kind: str = "tabulated"
    C: complex = 1.0 + 0j
    u: Optional[np.ndarray] = None

    @staticmethod
    def plane_phase(u, C=1.0 + 0j) -> "BoundaryAnsatz":
        u = as_four(u)
        u2 = minkowski_dot(u, u)
        return BoundaryAnsatz(lambda s: C * np.exp(0.5j * u2 * s),
                              kind="plane-phase", C=complex(C), u=u)

    @staticmethod
    def action_phase(action_along: Callable[[float], float], C=1.0 + 0j,
                     hbar: float = 1.0) -> "BoundaryAnsatz":
        return BoundaryAnsatz(lambda s: C * np.exp(1j * action_along(s) / hbar),
                              kind="action-phase", C=complex(C))

    def scaled(self, c: complex) -> "BoundaryAnsatz":
        return BoundaryAnsatz(lambda s: c * self.value(s), kind=self.kind,
                              C=c * self.C, u=self.u)


@dataclass(frozen=True)
class EcdPair:
    """An extended-charge particle: worldline, boundary wave, propagator, calibration."""

    trajectory: Trajectory
    ansatz: BoundaryAnsatz
    propagator: Callable[[np.ndarray, np.ndarray, float], complex]
    calibration: EpsilonCalibration
    hbar: float = 1.0

    @staticmethod
    def free(u, calibration: EpsilonCalibration, C=1.0 + 0j, x0=(0, 0, 0, 0),
             s_span=(-200.0, 200.0), q: float = 0.0, hbar: float = 1.0) -> "EcdPair":
        span = max(abs(s_span[0]), abs(s_span[1]), 2 * calibration.s_max)
        traj = Trajectory.uniform(u, x0=x0, s_span=(-span, span), n=9, q=q)
        return EcdPair(traj, BoundaryAnsatz.plane_phase(u, C),
                       lambda x, xp, sig: free_propagator(x, xp, sig, hbar),
                       calibration, hbar=hbar)


class QuadratureBudgetError(RuntimeError):
    """The windowed s'-integral failed to reach the requested accuracy."""


def phi_eval(pair: EcdPair, x, s: float, tol: float = 1e-9,
             full_output: bool = False):
    """Evaluate phi(x, s) from the windowed integral equation.

    Each half-line |s - s'| in [eps, s_max] is mapped by sigma -> 1/t onto a
    finite interval (the integrand grows like sigma^{-2} at the window edge,
    which the substitution flattens) and integrated adaptively; the reported
    tail bound is the exact free-integrand truncation error eps / s_max.
    """
    x = as_four(x)
    cal = pair.calibration
    eps, s_max = cal.epsilon, cal.s_max

    def integrand(sigma, sign_branch):
        sig = sign_branch * sigma
        sp = s - sig
        gamma, _ = pair.trajectory.state_at(sp)
        return (pair.propagator(x, gamma, sig) * pair.ansatz.value(sp)
                * cal.window(sig))

    def half_line(sign_branch):
        # sigma = 1/t, d sigma = -dt / t^2; t runs over [1/s_max, 1/eps]
        def f(t):
            return integrand(1.0 / t, sign_branch) / t ** 2

        # epsabs=0 makes quad's divergence heuristic fire on near-constant
        # integrands; accuracy is enforced by the explicit error check below
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            re, re_err = quad(lambda t: f(t).real, 1.0 / s_max, 1.0 / eps,
                              limit=300, epsabs=0.0, epsrel=tol)
            im, im_err = quad(lambda t: f(t).imag, 1.0 / s_max, 1.0 / eps,
                              limit=300, epsabs=0.0, epsrel=tol)
        val = re + 1j * im
        err = np.hypot(re_err, im_err)
        return val, err

    plus, err_p = half_line(+1)
    minus, err_m = half_line(-1)
    value = (1j / cal.N) * (plus + minus)
    scale = max(abs(value), 1e-300)
    if (err_p + err_m) / (abs(cal.N) * scale) > 100 * max(tol, 1e-12):
        raise QuadratureBudgetError(
            f"s'-quadrature error {(err_p + err_m):g} too large for |phi| = {scale:g}")
    if full_output:
        diag = {"tail_bound": eps / s_max,
                "quad_error": (err_p + err_m) / abs(cal.N)}
        return value, diag
    return value


def free_phi_closed_form(x, s, u, C, epsilon):
    """phi = C e^{i(u.xi + u^2 s/2)} sinc(xi^2 / (2 eps)), xi = x - u s.

    This is the calibrated free solution; on the worldline (xi = 0) it reduces
    to the plane-phase ansatz.  Vectorized over leading axes of x.
    """
    x = np.asarray(x, dtype=float)
    u = as_four(u)
    u2 = minkowski_dot(u, u)
    xi = x - u * s
    xi2 = xi[..., 0] ** 2 - np.sum(xi[..., 1:] ** 2, axis=-1)
    u_dot_xi = xi[..., 0] * u[0] - xi[..., 1:] @ u[1:]
    phase = u_dot_xi + 0.5 * u2 * s
    return C * np.exp(1j * phase) * np.sinc(xi2 / (2.0 * epsilon) / np.pi)


def consistency_residual(pair: EcdPair, s_samples, tol: float = 1e-9) -> float:
    """max_s |phi_eval(gamma_s, s) - ansatz(s)| / |ansatz(s)|.

    For a valid pair the O(1) part cancels by the calibration of N and the
    residual is O(eps).  Where |ansatz| < 1e-12 the error is absolute.
    """
    worst = 0.0
    for s in np.atleast_1d(s_samples):
        gamma, _ = pair.trajectory.state_at(float(s))
        val = phi_eval(pair, gamma, float(s), tol=tol)
        ref = pair.ansatz.value(float(s))
        denom = abs(ref) if abs(ref) > 1e-12 else 1.0
        worst = max(worst, abs(val - ref) / denom)
    return worst


def surfing_residual(phi: Callable, gamma, s: float, h: float = 1e-3) -> np.ndarray:
    """Re[d_mu phi phi*] at (gamma, s) with central-difference gradients."""
    gamma = as_four(gamma)
    center = phi(gamma, s)
    out = np.empty(4)
    for mu in range(4):
        e = np.zeros(4)
        e[mu] = h
        grad = (phi(gamma + e, s) - phi(gamma - e, s)) / (2 * h)
        out[mu] = (grad * np.conj(center)).real
    return out


# ---------------------------------------------------------------------------
# guiding ODE


@dataclass
class GuidingState:
    s: float
    gamma: np.ndarray
    condition_number: float = 1.0
    violent: bool = False


@dataclass(frozen=True)
class ViolentEvent:
    """Guiding breakdown report: where it happened and how singular H was."""

    s: float
    condition_number: float
    gamma: np.ndarray


def _abs2(phi, x, s):
    v = phi(x, s)
    return (v * np.conj(v)).real


def guiding_hessian(phi, gamma, s, h):
    """H_mn = d_m d_n |phi|^2 and f_m = d_s d_m |phi|^2 at (gamma, s)."""
    gamma = as_four(gamma)
    H = np.empty((4, 4))
    f = np.empty(4)
    c0 = _abs2(phi, gamma, s)
    for mu in range(4):
        emu = np.zeros(4)
        emu[mu] = h
        H[mu, mu] = (_abs2(phi, gamma + emu, s) - 2 * c0 + _abs2(phi, gamma - emu, s)) / h ** 2
        f[mu] = (_abs2(phi, gamma + emu, s + h) - _abs2(phi, gamma + emu, s - h)
                 - _abs2(phi, gamma - emu, s + h) + _abs2(phi, gamma - emu, s - h)) / (4 * h ** 2)
        for nu in range(mu + 1, 4):
            env = np.zeros(4)
            env[nu] = h
            H[mu, nu] = H[nu, mu] = (
                _abs2(phi, gamma + emu + env, s) - _abs2(phi, gamma + emu - env, s)
                - _abs2(phi, gamma - emu + env, s) + _abs2(phi, gamma - emu - env, s)
            ) / (4 * h ** 2)
    return H, f


def guiding_velocity(phi, gamma, s, h, kappa_max=1e8):
    H, f = guiding_hessian(phi, gamma, s, h)
    kappa = float(np.linalg.cond(H))
    if not np.isfinite(kappa) or kappa >= kappa_max:
        return None, kappa
    return -np.linalg.solve(H, f), kappa


def guiding_step(phi, state: GuidingState, h: float, ds: float,
                 kappa_max: float = 1e8) -> GuidingState:
    """One RK4 step of gamma_dot = -H^{-1} f; flags instead of raising on singular H."""
    if state.violent:
        return state

    def vel(s, gamma):
        v, kappa = guiding_velocity(phi, gamma, s, h, kappa_max)
        return v, kappa

    s, gamma = state.s, state.gamma
    k1, kap = vel(s, gamma)
    if k1 is None:
        return GuidingState(s, gamma, kap, violent=True)
    k2, _ = vel(s + ds / 2, gamma + ds / 2 * k1)
    k3, _ = vel(s + ds / 2, gamma + ds / 2 * k2)
    k4, _ = vel(s + ds, gamma + ds * k3)
    if k2 is None or k3 is None or k4 is None:
        return GuidingState(s, gamma, np.inf, violent=True)
    new_gamma = gamma + ds / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return GuidingState(s + ds, new_gamma, kap, violent=False)


def integrate_guiding(phi, gamma0, s_span, n_steps: int, h: float = 1e-3,
                      kappa_max: float = 1e8):
    """Integrate the guiding ODE; returns (states, violent_event_or_None)."""
    s0, s1 = s_span
    ds = (s1 - s0) / n_steps
    state = GuidingState(s0, as_four(gamma0).copy())
    states = [state]
    for _ in range(n_steps):
        state = guiding_step(phi, state, h, ds, kappa_max)
        states.append(state)
        if state.violent:
            return states, ViolentEvent(state.s, state.condition_number, state.gamma)
    return states, None


# ---------------------------------------------------------------------------
# classical limit


def constant_field_pair(F, u0, calibration: EpsilonCalibration, q: float = 1.0,
                        C=1.0 + 0j, hbar: float = 1.0, x0=(0, 0, 0, 0),
                        s_span=(-200.0, 200.0), step: float = 1e-2) -> EcdPair:
    """ECD pair whose propagator is the (exact) semiclassical constant-field form
    and whose ansatz carries the classical action phase along the worldline."""
    from .dynamics import FieldProvider, IntegratorConfig, integrate_worldline

    provider = constant_field_action_provider(F, q)
    span = max(abs(s_span[0]), abs(s_span[1]), 2 * calibration.s_max)
    fieldp = FieldProvider.constant(F)
    cfg = IntegratorConfig(step=step, tolerance=1e-6)
    fwd = integrate_worldline((x0, u0), fieldp, q, (0.0, span), cfg)
    bwd = integrate_worldline((x0, -np.asarray(u0, dtype=float)), fieldp, q,
                              (0.0, span), cfg)
    s = np.concatenate([-bwd.s[::-1][:-1], fwd.s])
    gammas = np.concatenate([bwd.gammas[::-1][:-1], fwd.gammas])
    gdots = np.concatenate([-bwd.gamma_dots[::-1][:-1], fwd.gamma_dots])
    traj = Trajectory(s, gammas, gdots, q=q)

    # classical action along the worldline, I(0) = 0
    F_lower = METRIC @ np.asarray(F, dtype=float) @ METRIC
    lag = np.empty(s.size)
    for i in range(s.size):
        xdot = gdots[i]
        A_low = -0.5 * F_lower @ gammas[i]
        lag[i] = 0.5 * minkowski_dot(xdot, xdot) + q * float(xdot @ A_low)
    from scipy.integrate import cumulative_trapezoid
    I_cum = cumulative_trapezoid(lag, s, initial=0.0)
    i0 = int(np.searchsorted(s, 0.0))
    I_cum -= np.interp(0.0, s, I_cum)
    action_along = lambda sv: float(np.interp(sv, s, I_cum))

    def G(x, xp, sigma):
        I = provider.action(x, xp, sigma)
        vv = constant_field_van_vleck(F, sigma, q)
        return _pref(sigma, hbar) * vv * np.exp(1j * I / hbar)

    return EcdPair(traj, BoundaryAnsatz.action_phase(action_along, C, hbar),
                   G, calibration, hbar=hbar)


def classical_phase_gradient_check(pair: EcdPair, F, q: float,
                                   s_samples, h: float = 1e-3,
                                   tol: float = 1e-8,
                                   with_recovery: bool = False):
    """max_s |d_mu phi - i p_mu phi / hbar| / |phi| on the worldline.

    p_mu is the canonical momentum g gamma_dot + q A(gamma) of the classical
    worldline; the residual shrinks as the field varies more slowly on the
    charge's own length scale (the classical limit).

    With with_recovery=True also returns the worst relative error of the
    velocity recovered from the measured phase gradient,
    gamma_dot_rec = g (hbar Im[d phi / phi] - q A), against the integrated
    worldline velocity -- the phase gradient reconstructs the trajectory.
    """
    F_lower = METRIC @ np.asarray(F, dtype=float) @ METRIC
    worst = 0.0
    worst_rec = 0.0
    for s in np.atleast_1d(s_samples):
        gamma, gdot = pair.trajectory.state_at(float(s))
        A_low = -0.5 * F_lower @ gamma
        p = METRIC @ gdot + q * A_low
        center = phi_eval(pair, gamma, float(s), tol=tol)
        grad = np.empty(4, dtype=complex)
        for mu in range(4):
            e = np.zeros(4)
            e[mu] = h
            grad[mu] = (phi_eval(pair, gamma + e, float(s), tol=tol)
                        - phi_eval(pair, gamma - e, float(s), tol=tol)) / (2 * h)
        err = np.abs(grad - 1j * p * center / pair.hbar).max()
        worst = max(worst, err / abs(center))
        p_measured = pair.hbar * np.imag(grad / center)
        gdot_rec = METRIC @ (p_measured - q * A_low)
        worst_rec = max(worst_rec, float(np.abs(gdot_rec - gdot).max()
                                         / np.abs(gdot).max()))
    if with_recovery:
        return worst, worst_rec
    return worst


def scale_transform_pair(pair: EcdPair, lam: float) -> EcdPair:
    """The dilatation of a pair: gamma -> lam gamma(s/lam^2), phi -> lam^{-2} phi(x/lam, s/lam^2),
    eps -> lam^2 eps (equivalently N -> N / lam^2); s_max scales with eps."""
    if lam <= 0:
        raise ValueError("scale factor must be positive")
    from .dynamics import apply_scaling

    traj = apply_scaling(pair.trajectory, lam)
    old_ansatz = pair.ansatz
    new_ansatz = BoundaryAnsatz(
        lambda s: lam ** -2 * old_ansatz.value(s / lam ** 2),
        kind=old_ansatz.kind, C=lam ** -2 * old_ansatz.C,
        u=None if old_ansatz.u is None else old_ansatz.u / lam)
    cal = EpsilonCalibration(lam ** 2 * pair.calibration.epsilon,
                             lam ** 2 * pair.calibration.s_max)
    old_G = pair.propagator
    new_G = lambda x, xp, sig: lam ** -4 * old_G(np.asarray(x) / lam,
                                                 np.asarray(xp) / lam,
                                                 sig / lam ** 2)
    return EcdPair(traj, new_ansatz, new_G, cal, hbar=pair.hbar)
