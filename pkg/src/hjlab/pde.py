"""Monotone finite-difference solver for the viscous HJ equation.

Discretizes ``du/dt = a(x) d2u/dx2 + G(du/dx) + beta V(x)`` with explicit
Euler in time, a central second difference for diffusion, and an upwind
(Godunov) flux for the quasiconvex Hamiltonian.  Monotonicity of the
one-step update under the CFL bound is what makes the scheme converge to
the viscosity solution, so everything here favours plainness over order:
no implicit stages, no limiters.

Also holds the epsilon-sweep driver that empirically verifies the
homogenized limit, and the perturbed-profile residual probes for the
sub/supersolution constructions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .corrector import CorrectorProfile, GluedProfile
from .environment import EnvRealization, sample_many
from .errors import ConfigError, SignError, StabilityError, WindowError
from .hamiltonian import bracket

__all__ = [
    "SchemeConfig",
    "EvolveResult",
    "SweepResult",
    "SignReport",
    "godunov_flux",
    "scheme_update",
    "cfl_gradient_range",
    "cfl_number",
    "stable_dt",
    "evolve",
    "profile_antiderivative",
    "homogenize_sweep",
    "residual_probe",
    "save_sweep",
    "save_probe",
]


# ============================================================
# Scheme configuration
# ============================================================

@dataclass(frozen=True)
class SchemeConfig:
    """Grid and boundary rule for one evolve run.

    ``boundary`` is "linear" (ghost values extended with slope
    ``theta``; the right choice for linear-data runs) or "clamp" (ghost
    slope copies the adjacent interior slope; for profile initial
    data).  ``theta`` always feeds the CFL gradient range, so set it to
    a representative slope even for clamped runs.
    """

    dx: float
    dt: float
    M: float
    T: float
    theta: float
    boundary: str = "linear"

    def __post_init__(self):
        for name in ("dx", "dt", "M", "T"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and math.isfinite(val)
                    and val > 0):
                raise ConfigError(f"{name} must be a positive number, got {val}")
        if self.boundary not in ("linear", "clamp"):
            raise ConfigError(
                f"boundary must be 'linear' or 'clamp', got {self.boundary!r}")
        n = self.M / self.dx
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ConfigError(
                f"M = {self.M} must be a whole number of grid steps "
                f"(dx = {self.dx}) so x = 0 lands on a node")


def cfl_gradient_range(G, beta: float, theta: float) -> tuple[float, float]:
    """A priori slope range reachable from linear data with slope theta.

    Levels cannot exceed lam_max = beta + G(theta) + beta, so one-sided
    slopes stay within the brackets at lam_max, padded by one unit.  A
    runtime monitor reports excursions; they signal that the CFL input
    was too optimistic.
    """
    lam_max = float(beta) + float(G(theta)) + float(beta)
    p_lo = min(float(theta), G.branch_inverse(1, lam_max)) - 1.0
    p_hi = max(float(theta), G.branch_inverse(2, lam_max)) + 1.0
    return p_lo, p_hi


def cfl_number(scheme: SchemeConfig, a_max: float, kappa_grad: float) -> float:
    return scheme.dt * (2.0 * a_max / scheme.dx ** 2 + kappa_grad / scheme.dx)


def stable_dt(env: EnvRealization, G, beta: float, theta: float,
              dx: float, target: float = 0.9) -> float:
    """Largest dt satisfying the CFL bound with margin ``target``."""
    a_max = float(env.a_vals.max())
    kappa = G.lipschitz_on(cfl_gradient_range(G, beta, theta))
    return target / (2.0 * a_max / dx ** 2 + kappa / dx)


# ============================================================
# Flux and one-step update
# ============================================================

def godunov_flux(G, p_minus, p_plus):
    """Upwind flux for u_t = G(u_x), G quasiconvex with minimum at 0.

    max(G1(min(p-, 0)), G2(max(p+, 0))): each side contributes only the
    slope pointing into its characteristic direction, so the assembled
    scheme is nondecreasing in both neighbor values.
    """
    down = G(np.minimum(p_minus, 0.0))
    up = G(np.maximum(p_plus, 0.0))
    out = np.maximum(down, up)
    return float(out) if np.ndim(out) == 0 else out


def scheme_update(G, beta: float, u_left, u_center, u_right, a, v,
                  dx: float, dt: float):
    """One explicit-Euler step of the three-point monotone scheme."""
    lap = (u_right - 2.0 * u_center + u_left) / dx ** 2
    flux = godunov_flux(G, (u_center - u_left) / dx, (u_right - u_center) / dx)
    return u_center + dt * (a * lap + flux + beta * v)


# ============================================================
# Time evolution
# ============================================================

@dataclass(frozen=True)
class EvolveResult:
    """Final slice of one run plus bookkeeping.

    ``grad_range_seen`` is the observed (min D-, max D+) over all steps;
    ``grad_excursion`` flags any escape from the CFL gradient range (the
    run still completes -- the flag marks the CFL certificate as
    untrusted, not the arithmetic).
    """

    xs: np.ndarray
    u: np.ndarray
    t: float
    steps: int
    cfl: float
    grad_range_seen: tuple[float, float]
    grad_excursion: bool
    trace_t: np.ndarray | None = None
    trace_u: np.ndarray | None = None

    def __post_init__(self):
        self.xs.setflags(write=False)
        self.u.setflags(write=False)


def evolve(env: EnvRealization, G, beta: float, initial_data,
           scheme: SchemeConfig, *, trace_x: float | None = None,
           trace_stride: int = 1) -> EvolveResult:
    """March the monotone scheme from t = 0 to t = scheme.T.

    ``initial_data`` is a callable evaluated on the grid or an array of
    matching length.  Ghost values follow ``scheme.boundary``.  Raises
    on CFL violation and on non-finite values (which, under a valid
    CFL, indicate a bug rather than instability).
    """
    beta = float(beta)
    dx, dt = scheme.dx, scheme.dt
    n = int(round(2.0 * scheme.M / dx))
    xs = -scheme.M + dx * np.arange(n + 1)
    a, v = sample_many(env, xs)
    p_lo, p_hi = cfl_gradient_range(G, beta, scheme.theta)
    kappa = G.lipschitz_on((p_lo, p_hi))
    cfl = cfl_number(scheme, float(a.max()), kappa)
    if cfl > 0.9 + 1e-12:
        raise StabilityError(
            f"CFL number {cfl:.3f} exceeds 0.9; shrink dt below "
            f"{stable_dt(env, G, beta, scheme.theta, dx):.3e}")

    u = np.asarray(initial_data(xs) if callable(initial_data)
                   else initial_data, dtype=np.float64).copy()
    if u.shape != xs.shape:
        raise ConfigError(
            f"initial data has {u.shape[0] if u.ndim else 0} values for "
            f"{xs.size} grid nodes")
    if not np.all(np.isfinite(u)):
        raise StabilityError("initial data contains non-finite values")

    n_steps = int(math.floor(scheme.T / dt + 1e-9))
    dt_tail = scheme.T - n_steps * dt
    if dt_tail <= 1e-12 * scheme.T:
        dt_tail = 0.0

    src = beta * v
    theta_dx = scheme.theta * dx
    linear = scheme.boundary == "linear"
    seen_lo, seen_hi = np.inf, -np.inf
    trace_t, trace_u = ([], []) if trace_x is not None else (None, None)
    if trace_x is not None:
        i_tr = int(round((float(trace_x) + scheme.M) / dx))
        if not 0 <= i_tr <= n:
            raise ConfigError(f"trace_x = {trace_x} outside [-M, M]")

    ue = np.empty(u.size + 2, dtype=np.float64)
    t = 0.0
    step = 0
    total = n_steps + (1 if dt_tail > 0.0 else 0)
    while step < total:
        h = dt if step < n_steps else dt_tail
        ue[1:-1] = u
        if linear:
            ue[0] = u[0] - theta_dx
            ue[-1] = u[-1] + theta_dx
        else:
            ue[0] = 2.0 * u[0] - u[1]
            ue[-1] = 2.0 * u[-1] - u[-2]
        dm = (ue[1:-1] - ue[:-2]) / dx
        dp = (ue[2:] - ue[1:-1]) / dx
        lo = float(min(dm.min(), dp.min()))
        hi = float(max(dm.max(), dp.max()))
        seen_lo = min(seen_lo, lo)
        seen_hi = max(seen_hi, hi)
        lap = (ue[2:] - 2.0 * ue[1:-1] + ue[:-2]) / dx ** 2
        flux = np.maximum(G(np.minimum(dm, 0.0)), G(np.maximum(dp, 0.0)))
        u = u + h * (a * lap + flux + src)
        if not np.all(np.isfinite(u)):
            raise StabilityError(
                f"non-finite values at t = {t + h:.6g} despite CFL "
                f"{cfl:.3f}: this is a bug, not instability")
        t += h
        step += 1
        if trace_t is not None and step % max(trace_stride, 1) == 0:
            trace_t.append(t)
            trace_u.append(float(u[i_tr]))

    return EvolveResult(
        xs=xs, u=u, t=t, steps=step, cfl=cfl,
        grad_range_seen=(seen_lo, seen_hi),
        grad_excursion=bool(seen_lo < p_lo or seen_hi > p_hi),
        trace_t=None if trace_t is None else np.asarray(trace_t),
        trace_u=None if trace_u is None else np.asarray(trace_u))


def profile_antiderivative(profile) -> callable:
    """F(x) = integral of the profile slope, pinned to F(0) = 0.

    Linear interpolation between profile nodes; clamps outside the
    profile grid (callers should cover their scheme domain).
    """
    grid = profile.grid
    F = cumulative_trapezoid(profile.f_vals, grid, initial=0.0)
    if grid[0] <= 0.0 <= grid[-1]:
        F = F - np.interp(0.0, grid, F)

    def antiderivative(x):
        return np.interp(x, grid, F)

    return antiderivative


# ============================================================
# Homogenization sweep
# ============================================================

@dataclass(frozen=True)
class SweepResult:
    """epsilon ladder versus the effective prediction at one slope.

    ``values[i]`` is eps * u_theta(1/eps, 0) on the base domain;
    ``domain_sensitivity[i]`` is its change when the domain half-width
    doubles -- the honest surrogate for boundary error.
    """

    theta: float
    epsilons: np.ndarray
    values: np.ndarray
    reference: float
    domain_sensitivity: np.ndarray
    grad_excursion: bool = False

    def __post_init__(self):
        if self.epsilons.size != self.values.size or \
                self.epsilons.size != self.domain_sensitivity.size:
            raise ValueError("epsilons, values, sensitivities must align")
        if np.any(np.diff(self.epsilons) >= 0):
            raise ValueError("epsilons must be strictly decreasing")
        for arr in (self.epsilons, self.values, self.domain_sensitivity):
            arr.setflags(write=False)


def homogenize_sweep(env: EnvRealization, G, beta: float, theta: float,
                     epsilons, scheme: SchemeConfig, *,
                     reference: float | None = None,
                     ref_tol: float = 2e-2, ref_X: float = 300.0,
                     ref_dx: float = 0.01) -> SweepResult:
    """Record eps * u_theta(1/eps, 0) along an epsilon ladder.

    ``scheme.M`` is the half-width of the scaled domain: each run uses
    [-M/eps, M/eps] at unit scale (and [-2M/eps, 2M/eps] for the
    sensitivity rerun), evolving u(0, x) = theta x to T = 1/eps with the
    linear-theta boundary.  ``reference`` defaults to the effective
    Hamiltonian at theta, computed from correctors on the same medium.
    """
    beta = float(beta)
    theta = float(theta)
    eps_arr = np.asarray(sorted(set(float(e) for e in epsilons),
                                reverse=True), dtype=np.float64)
    if eps_arr.size == 0:
        raise ConfigError("need at least one epsilon")
    if np.any(eps_arr <= 0.0) or np.any(eps_arr >= 1.0):
        raise ConfigError("epsilons must lie in (0, 1)")

    # check the window once, against the widest (doubled) run
    eps_min = float(eps_arr[-1])
    n_widest = math.ceil(scheme.M / (eps_min * scheme.dx) - 1e-9)
    m_widest = 2.0 * n_widest * scheme.dx
    if env.window[0] > -m_widest - scheme.dx or \
            env.window[1] < m_widest + scheme.dx:
        raise WindowError(
            f"environment window {env.window} cannot cover the doubled "
            f"domain [-{m_widest:g}, {m_widest:g}] at eps = {eps_min:g}")

    if reference is None:
        from .effective import effective_reference
        reference, _ = effective_reference(env, G, beta, theta, ref_tol,
                                           X=ref_X, dx=ref_dx)

    values = np.empty(eps_arr.size)
    sens = np.empty(eps_arr.size)
    excursion = False
    for k, eps in enumerate(eps_arr):
        t_final = 1.0 / eps
        n_half = math.ceil(scheme.M / (eps * scheme.dx) - 1e-9)
        pair = []
        for m_run in (n_half * scheme.dx, 2 * n_half * scheme.dx):
            run_scheme = SchemeConfig(dx=scheme.dx, dt=scheme.dt, M=m_run,
                                      T=t_final, theta=theta,
                                      boundary="linear")
            res = evolve(env, G, beta, lambda x: theta * x, run_scheme)
            i0 = int(round(m_run / scheme.dx))
            pair.append(eps * float(res.u[i0]))
            excursion = excursion or res.grad_excursion
        values[k] = pair[0]
        sens[k] = abs(pair[1] - pair[0])
    return SweepResult(theta=theta, epsilons=eps_arr, values=values,
                       reference=float(reference),
                       domain_sensitivity=sens, grad_excursion=excursion)


# ============================================================
# Sub/supersolution residual probes
# ============================================================

def _psi_prime(x):
    return (2.0 / math.pi) * np.arctan(x)


def _psi_second(x):
    return (2.0 / math.pi) / (1.0 + x * x)


@dataclass(frozen=True)
class SignReport:
    """One-sided residual check of a drifted profile."""

    kind: str
    drift: float
    min_residual: float
    max_residual: float
    tol: float
    passed: bool
    kappa: float | None = None


def residual_probe(env: EnvRealization, G, beta: float, profile,
                   delta: float, kind: str, tol: float | None = None,
                   strict: bool = True) -> SignReport:
    """Check the sign of the smooth residual of a drifted profile.

    For a corrector profile F at level lam, the candidate is
    ``t (lam -/+ (kappa+1) delta) + F(x) -/+ delta psi(x)`` with
    psi'(x) = (2/pi) arctan(x) -- sub drifts down, super drifts up, and
    kappa is a Lipschitz constant of G on the padded slope bracket.
    For a glued flat-piece profile the candidate is undecorated:
    ``t (beta - 3 delta) + F(x)`` (sub) or ``t (beta + 4 delta) + F(x)``
    (super).  The residual a F'' + G(F') + beta V - drift is evaluated
    with centered differences for F'' and analytic psi derivatives;
    sub requires min >= -tol, super requires max <= tol.
    """
    if kind not in ("sub", "super"):
        raise ValueError(f"kind must be 'sub' or 'super', got {kind!r}")
    delta = float(delta)
    if delta <= 0.0:
        raise ValueError(f"delta must be positive, got {delta}")
    beta = float(beta)
    if not isinstance(profile, (GluedProfile, CorrectorProfile)):
        raise ValueError(
            f"profile must be a corrector or glued profile, got "
            f"{type(profile).__name__}")
    grid = profile.grid
    f = profile.f_vals
    dx = float(grid[1] - grid[0])
    if tol is None:
        tol = 10.0 * dx
    a, v = sample_many(env, grid)
    fd = (f[2:] - f[:-2]) / (2.0 * dx)
    xi, ai, vi, fi = grid[1:-1], a[1:-1], v[1:-1], f[1:-1]

    if isinstance(profile, GluedProfile):
        kappa = None
        drift = beta - 3.0 * delta if kind == "sub" else beta + 4.0 * delta
        r = ai * fd + G(fi) + beta * vi - drift
    else:
        p_lo, p_hi = bracket(G, profile.branch, profile.lam, profile.beta)
        kappa = float(G.lipschitz_on((p_lo - 1.0, p_hi + 1.0)))
        c = -delta if kind == "sub" else delta
        drift = profile.lam + (kappa + 1.0) * c
        r = (ai * (fd + c * _psi_second(xi))
             + G(fi + c * _psi_prime(xi)) + beta * vi - drift)

    r_min, r_max = float(r.min()), float(r.max())
    if kind == "sub":
        passed = r_min >= -tol
    else:
        passed = r_max <= tol
    report = SignReport(kind=kind, drift=float(drift), min_residual=r_min,
                        max_residual=r_max, tol=float(tol), passed=passed,
                        kappa=kappa)
    if strict and not passed:
        raise SignError(
            f"{kind} check failed: residual range [{r_min:.4g}, {r_max:.4g}] "
            f"vs tolerance {tol:.3g} at drift {drift:.6g}")
    return report


# ============================================================
# Persistence
# ============================================================

def save_sweep(result: SweepResult, path: str) -> None:
    """Write `theta,epsilon,value,reference,domain_sensitivity` rows."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("theta,epsilon,value,reference,domain_sensitivity\n")
        for eps, val, ds in zip(result.epsilons, result.values,
                                result.domain_sensitivity):
            fh.write(f"{result.theta!r},{float(eps)!r},{float(val)!r},"
                     f"{result.reference!r},{float(ds)!r}\n")


def save_probe(report: SignReport, path: str) -> None:
    """Write `kind,min_residual,max_residual,pass` (single row)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("kind,min_residual,max_residual,pass\n")
        fh.write(f"{report.kind},{report.min_residual!r},"
                 f"{report.max_residual!r},{report.passed}\n")
