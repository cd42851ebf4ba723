"""Static corrector construction for a f' + G(f) + beta V = lam.

The slope field f of a corrector solves a first-order ODE whose flow is
order-preserving and contracts inside the invariant slope bracket, so a
single shooting run plus a certified burn-in produces the stationary
solution to any prescribed tolerance:

* ``shoot`` integrates the ODE with fixed-step RK4 and a bracket-exit
  guard — the bracket is invariant for the exact flow, so leaving it
  signals a bad step size or bad inputs, never a feature;
* ``burn_in_length`` turns a tolerance into a certified s-length via the
  contraction transform Phi of the branch modulus;
* ``corrector_profile`` shoots through the burn-in from two different
  starting values and checks that they have merged to within 2 tol;
* ``estimate_theta`` averages the corrector slope over a long window
  with a batch-means confidence interval;
* ``find_low_slope_points`` and ``build_glued_profile`` assemble the
  flat-piece sub/supersolution profiles at the degenerate level
  lam = beta by bridging the two one-sided correctors across a
  potential hill.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import t as student_t

from .environment import EnvRealization, HillWitness, reflect, s_at, sample_many
from .errors import BracketExitError, CertificateError, GlueError, WindowError
from .hamiltonian import bracket as slope_bracket
from .hamiltonian import monotonicity_modulus

__all__ = [
    "CorrectorProfile",
    "ThetaEstimate",
    "GluedProfile",
    "shoot",
    "burn_in_length",
    "corrector_profile",
    "estimate_theta",
    "residual_series",
    "find_low_slope_points",
    "build_glued_profile",
    "save_profile",
    "load_profile",
]

_BRACKET_GUARD = 1e-9


# ============================================================
# Profile containers
# ============================================================

@dataclass(frozen=True)
class CorrectorProfile:
    """Slope field of a one-sided corrector on a reported region.

    ``cert_bound`` is the certified sup-distance to the true stationary
    slope on the region: Phi^-1 of the burn-in s-length, or the full
    bracket width when no burn-in was performed.
    """

    branch: int
    lam: float
    beta: float
    grid: np.ndarray
    f_vals: np.ndarray
    burn_in: float
    cert_bound: float

    def __post_init__(self):
        self.grid.setflags(write=False)
        self.f_vals.setflags(write=False)

    @property
    def dx(self) -> float:
        return float(self.grid[1] - self.grid[0])


@dataclass(frozen=True)
class ThetaEstimate:
    """Ergodic average of a corrector slope with a batch-means CI."""

    branch: int
    lam: float
    beta: float
    mean: float
    ci_halfwidth: float
    window_length: float
    n_batches: int
    cert_bound: float
    flagged: bool = False


@dataclass(frozen=True)
class GluedProfile:
    """Flat-piece profile: two one-sided correctors joined by a bridge.

    ``order`` is "21" (branch 2 left of branch 1, tent-shaped potential
    primitive, subsolution candidate) or "12" (the mirror construction,
    supersolution candidate).  ``residual_band`` is the observed range
    of a f' + G(f) + beta V over interior grid points.
    """

    order: str
    delta: float
    beta: float
    z1: float
    z2: float
    grid: np.ndarray
    f_vals: np.ndarray
    residual_band: tuple[float, float]

    def __post_init__(self):
        self.grid.setflags(write=False)
        self.f_vals.setflags(write=False)


# ============================================================
# Shooting core
# ============================================================

def _rk4_forward(env: EnvRealization, G, lam: float, beta: float,
                 L: float, c: float, x_end: float, dx: float,
                 p_lo: float, p_hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Integrate f' = (lam - beta V - G(f)) / a rightward from (L, c).

    Coefficients at all RK4 stage points are sampled in one vectorized
    pass; the stepping loop itself is scalar Python, which beats array
    dispatch at size 1 by a wide margin.
    """
    span = x_end - L
    if span <= 0:
        raise ValueError(f"integration span must be positive, got [{L}, {x_end}]")
    # steps of exactly dx plus one short tail step: a rescaled step would
    # lose commensurability with periodic media and stop integrator
    # error from cancelling between periods
    n_full = int(math.floor(span / dx + 1e-9))
    tail = span - n_full * dx
    if tail <= 1e-9 * max(1.0, abs(x_end)):
        tail = 0.0
    xs = L + dx * np.arange(n_full + 1)
    stage_x = L + 0.5 * dx * np.arange(2 * n_full + 1)
    if tail > 0.0:
        xs = np.concatenate((xs, [x_end]))
        stage_x = np.concatenate((stage_x, [x_end - 0.5 * tail, x_end]))
    a_st, v_st = sample_many(env, stage_x)
    A = (1.0 / a_st).tolist()
    B = ((lam - beta * v_st) / a_st).tolist()
    geval = G.scalar
    lo = p_lo - _BRACKET_GUARD
    hi = p_hi + _BRACKET_GUARD
    n_steps = n_full + (1 if tail > 0.0 else 0)
    fs = [0.0] * (n_steps + 1)
    f = float(c)
    fs[0] = f
    h = dx
    h2 = 0.5 * h
    h6 = h / 6.0
    for i in range(n_steps):
        if i == n_full:
            h = tail
            h2 = 0.5 * h
            h6 = h / 6.0
        j = 2 * i
        a0, am, a1 = A[j], A[j + 1], A[j + 2]
        b0, bm, b1 = B[j], B[j + 1], B[j + 2]
        k1 = b0 - a0 * geval(f)
        k2 = bm - am * geval(f + h2 * k1)
        k3 = bm - am * geval(f + h2 * k2)
        k4 = b1 - a1 * geval(f + h * k3)
        f = f + h6 * (k1 + 2.0 * (k2 + k3) + k4)
        if not (lo <= f <= hi):
            raise BracketExitError(
                f"slope left the invariant bracket [{p_lo:g}, {p_hi:g}] "
                f"near x = {float(xs[i + 1]):.6g} (f = {f:.6g}); "
                f"reduce the integration step or check the inputs")
        fs[i + 1] = f
    return xs, np.asarray(fs)


def shoot(env: EnvRealization, G, beta: float, lam: float, branch: int,
          L: float, c: float, dx: float) -> CorrectorProfile:
    """One shooting run across the remaining window.

    Branch 2 integrates rightward from L to the window's right end;
    branch 1 integrates leftward from L to the window's left end via
    the reflection substitution (reflect the medium and the Hamiltonian,
    integrate branch 2, map back).  The run is *checked* against the
    invariant bracket, never clamped to it.
    """
    if lam < beta:
        raise ValueError(f"corrector level lam={lam} must be >= beta={beta}")
    p_lo, p_hi = slope_bracket(G, branch, lam, beta)
    if not (p_lo - 1e-12 <= c <= p_hi + 1e-12):
        raise ValueError(f"start value c={c} outside branch bracket [{p_lo:g}, {p_hi:g}]")
    if branch == 2:
        xs, fs = _rk4_forward(env, G, lam, beta, L, c, env.window[1], dx, p_lo, p_hi)
    elif branch == 1:
        renv = reflect(env)
        xs, fs = _rk4_forward(renv, G.reflect(), lam, beta, -L, -c,
                              renv.window[1], dx, -p_hi, -p_lo)
        xs, fs = -xs[::-1], -fs[::-1]
    else:
        raise ValueError(f"branch must be 1 or 2, got {branch}")
    return CorrectorProfile(branch=branch, lam=lam, beta=beta,
                            grid=xs, f_vals=fs, burn_in=0.0,
                            cert_bound=p_hi - p_lo)


def burn_in_length(env_region, G, beta: float, lam: float,
                   tol: float) -> tuple[float, float]:
    """Certified burn-in: (s-length, x-length) so two bracketed runs
    merge to within tol.

    Returns z* with Phi^-1(z*) <= tol.  Conversion to x-length uses the
    worst case a <= 1 (s dominates x), so the x-length equals z*
    regardless of the realization; ``env_region`` is accepted for
    interface symmetry and may be None.
    """
    if tol <= 0:
        raise ValueError(f"tolerance must be positive, got {tol}")
    M = monotonicity_modulus(G, lam, beta)
    if tol >= M.K:
        return 0.0, 0.0
    z = M.phi(tol)
    return z, z


def corrector_profile(env: EnvRealization, G, beta: float, lam: float,
                      branch: int, region: tuple[float, float], tol: float,
                      dx: float) -> CorrectorProfile:
    """Certified corrector slope on ``region``.

    Shoots from beyond a certified burn-in with the bracket midpoint,
    reports only the region, and cross-checks against a second run
    started at a bracket endpoint: the two must agree to 2 tol on the
    region, or the certificate is declared broken.
    """
    x_lo, x_hi = float(region[0]), float(region[1])
    if x_hi <= x_lo:
        raise ValueError(f"empty region {region}")
    p_lo, p_hi = slope_bracket(G, branch, lam, beta)
    _, x_burn = burn_in_length(env, G, beta, lam, tol)
    M = monotonicity_modulus(G, lam, beta, branch=branch)

    # round the burn-in up to whole steps so region nodes sit exactly on
    # the integration lattice
    x_burn = math.ceil(x_burn / dx - 1e-9) * dx
    if branch == 2:
        L = x_lo - x_burn
        if L < env.window[0] - 1e-9:
            raise WindowError(
                f"region start {x_lo:g} minus burn-in {x_burn:g} falls outside "
                f"the window (needs x >= {env.window[0]:g})")
        runs = []
        for c in (0.5 * (p_lo + p_hi), p_hi):
            xs, fs = _rk4_forward(env, G, lam, beta, L, c, x_hi, dx, p_lo, p_hi)
            keep = xs >= x_lo - 1e-9
            runs.append((xs[keep], fs[keep]))
        s_burn = float(s_at(env, np.array([x_lo]))[0] - s_at(env, np.array([L]))[0])
    elif branch == 1:
        L = x_hi + x_burn
        if L > env.window[1] + 1e-9:
            raise WindowError(
                f"region end {x_hi:g} plus burn-in {x_burn:g} falls outside "
                f"the window (needs x <= {env.window[1]:g})")
        renv = reflect(env)
        Gr = G.reflect()
        runs = []
        for c in (0.5 * (p_lo + p_hi), p_lo):
            xs, fs = _rk4_forward(renv, Gr, lam, beta, -L, -c, -x_lo,
                                  dx, -p_hi, -p_lo)
            keep = xs >= -x_hi - 1e-9
            runs.append((-xs[keep][::-1], -fs[keep][::-1]))
        s_burn = float(s_at(env, np.array([L]))[0] - s_at(env, np.array([x_hi]))[0])
    else:
        raise ValueError(f"branch must be 1 or 2, got {branch}")

    (xs, fs), (_, fs_alt) = runs
    gap = float(np.max(np.abs(fs - fs_alt)))
    if gap > 2.0 * tol:
        raise CertificateError(
            f"two shooting starts still differ by {gap:.3g} after the "
            f"burn-in ({x_burn:g}); certified bound was {tol:g}")
    cert = min(M.phi_inv(s_burn), p_hi - p_lo)
    return CorrectorProfile(branch=branch, lam=lam, beta=beta,
                            grid=xs, f_vals=fs, burn_in=x_burn, cert_bound=cert)


def residual_series(env: EnvRealization, grid: np.ndarray, f_vals: np.ndarray,
                    G, beta: float) -> np.ndarray:
    """Centered-difference residual a f' + G(f) + beta V at interior nodes."""
    h = float(grid[1] - grid[0])
    a, v = sample_many(env, grid[1:-1])
    df = (f_vals[2:] - f_vals[:-2]) / (2.0 * h)
    return a * df + np.asarray(G(f_vals[1:-1])) + beta * v


# ============================================================
# Theta estimation
# ============================================================

def estimate_theta(env: EnvRealization, G, beta: float, lam: float,
                   branch: int, X: float, n_batches: int = 10,
                   tol: float = 1e-6, dx: float = 0.01) -> ThetaEstimate:
    """Ergodic average of the corrector slope over [0, X].

    The mean is the trapezoid average of a certified profile; the
    confidence interval comes from ``n_batches`` contiguous batch means
    (Student t, 95%).  Branch 1 averages over [-X, 0].
    """
    if n_batches < 10:
        raise ValueError(f"need at least 10 batches for the CI, got {n_batches}")
    if X <= 0:
        raise ValueError(f"window length must be positive, got {X}")
    region = (0.0, X) if branch == 2 else (-X, 0.0)
    prof = corrector_profile(env, G, beta, lam, branch, region, tol, dx)
    f = prof.f_vals
    mean = float(np.trapezoid(f, prof.grid) / X)
    edges = np.linspace(0, f.size - 1, n_batches + 1).astype(int)
    bm = np.array([f[edges[k]:edges[k + 1] + 1].mean() for k in range(n_batches)])
    tcrit = float(student_t.ppf(0.975, n_batches - 1))
    ci = tcrit * float(bm.std(ddof=1)) / math.sqrt(n_batches)
    M = monotonicity_modulus(G, lam, beta, branch=branch)
    return ThetaEstimate(branch=branch, lam=lam, beta=beta, mean=mean,
                         ci_halfwidth=ci, window_length=X, n_batches=n_batches,
                         cert_bound=prof.cert_bound, flagged=M.flagged)


# ============================================================
# Flat-piece gluing
# ============================================================

def _hill_levels(G, beta: float, delta: float) -> tuple[float, float]:
    """(required hill level, required hill s-length) for gluing at delta."""
    h_req = 1.0 - delta / beta
    s_req = (G.branch_inverse(2, beta) - G.branch_inverse(1, beta)) / delta
    return h_req, s_req


def find_low_slope_points(profile_pair, env: EnvRealization, G, delta: float,
                          hill: HillWitness, order: str = "21") -> tuple[float, float]:
    """Junction points (z1, z2) inside the hill where both one-sided
    corrector slopes have G-value at most 2 delta.

    ``profile_pair`` is (branch-1 profile, branch-2 profile) at the
    degenerate level lam = beta.  Points are positioned for the
    requested gluing order: z2 < z1 for "21", z1 < z2 for "12".  Every
    returned point is verified directly on the stored grid values.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if order not in ("21", "12"):
        raise ValueError(f"order must be '21' or '12', got {order!r}")
    p1, p2 = profile_pair
    if p1.branch != 1 or p2.branch != 2:
        raise ValueError("profile_pair must be (branch 1, branch 2)")
    beta = p2.beta
    _, s_req = _hill_levels(G, beta, delta)
    s_hill = hill.scaled_length
    if s_hill <= s_req:
        raise GlueError(
            f"hill s-length {s_hill:g} does not exceed the required "
            f"{s_req:g} = (G2^-1(beta) - G1^-1(beta)) / delta")
    lvl = 2.0 * delta

    def low_points(prof):
        m = (prof.grid >= hill.L1 - 1e-12) & (prof.grid <= hill.L2 + 1e-12)
        if not m.any():
            raise GlueError("profile does not cover the hill")
        xs = prof.grid[m]
        ok = np.asarray(G(prof.f_vals[m])) <= lvl
        if not ok.any():
            raise GlueError(
                f"no low-slope point of branch {prof.branch} inside the hill "
                f"(need G(f) <= {lvl:g}); hill too short for delta = {delta:g}")
        return xs[ok]

    low1 = low_points(p1)
    low2 = low_points(p2)
    if order == "21":
        z2 = float(low2[0])          # earliest along branch 2's travel
        z1 = float(low1[-1])         # earliest along branch 1's (leftward) travel
        if not z2 < z1:
            raise GlueError(
                f"low-slope points out of order for '21' (z2 = {z2:g} >= z1 = {z1:g}); "
                f"hill too short for delta = {delta:g}")
    else:
        z1 = float(low1[0])          # deepest penetration of branch 1
        z2 = float(low2[-1])         # deepest penetration of branch 2
        if not z1 < z2:
            raise GlueError(
                f"low-slope points out of order for '12' (z1 = {z1:g} >= z2 = {z2:g}); "
                f"hill too short for delta = {delta:g}")
    return z1, z2


def _hermite(t: np.ndarray, p0: float, m0: float, p1: float, m1: float):
    """Cubic Hermite value and derivative on a unit interval."""
    t2 = t * t
    t3 = t2 * t
    val = (p0 * (2 * t3 - 3 * t2 + 1) + m0 * (t3 - 2 * t2 + t)
           + p1 * (-2 * t3 + 3 * t2) + m1 * (t3 - t2))
    der = (p0 * (6 * t2 - 6 * t) + m0 * (3 * t2 - 4 * t + 1)
           + p1 * (-6 * t2 + 6 * t) + m1 * (3 * t2 - 2 * t))
    return val, der


def build_glued_profile(env: EnvRealization, G, beta: float, delta: float,
                        hill: HillWitness, order: str = "21",
                        region: tuple[float, float] | None = None,
                        dx: float = 0.01) -> GluedProfile:
    """Glue the two one-sided correctors at lam = beta across a hill.

    The profile keeps each corrector slope on its own side of the
    junctions and crosses the bracket through a bridge that is affine in
    the scaled coordinate s, with cubic Hermite blending zones of
    s-length 1 at both junctions so the result is C^1.  The bridge
    bounds G(g) <= 3 delta and -2 delta <= a g' <= delta are verified a
    posteriori; together with V >= 1 - delta/beta on the hill they pin
    the residual inside [beta - 3 delta, beta + 4 delta].
    """
    if order not in ("21", "12"):
        raise ValueError(f"order must be '21' or '12', got {order!r}")
    h_req, _ = _hill_levels(G, beta, delta)
    if hill.v_min_on_interval < h_req - 1e-12:
        raise GlueError(
            f"hill level {hill.v_min_on_interval:g} below the required "
            f"1 - delta/beta = {h_req:g}")
    if region is None:
        region = (hill.L1 - 2.0, hill.L2 + 2.0)
    R_lo, R_hi = float(region[0]), float(region[1])
    if R_lo > hill.L1 or R_hi < hill.L2:
        raise ValueError("region must contain the hill")
    if R_lo < env.window[0] - 1e-9 or R_hi > env.window[1] + 1e-9:
        raise WindowError("glue region falls outside the environment window")

    # snap the region span to a whole number of steps so the two
    # opposite-direction integrations share one node lattice
    n_span = int(math.ceil((R_hi - R_lo) / dx - 1e-9))
    R_hi = R_lo + n_span * dx
    if R_hi > env.window[1] + 1e-9:
        raise WindowError("glue region falls outside the environment window")

    # one-sided solutions across the whole region; any bracketed solution
    # solves the equation exactly, which is all the residual needs
    p_lo2, p_hi2 = slope_bracket(G, 2, beta, beta)
    p_lo1, p_hi1 = slope_bracket(G, 1, beta, beta)
    xs2, fs2 = _rk4_forward(env, G, beta, beta, R_lo, 0.5 * (p_lo2 + p_hi2),
                            R_hi, dx, p_lo2, p_hi2)
    renv = reflect(env)
    Gr = G.reflect()
    xs1, fs1 = _rk4_forward(renv, Gr, beta, beta, -R_hi, -0.5 * (p_lo1 + p_hi1),
                            -R_lo, dx, -p_hi1, -p_lo1)
    xs1, fs1 = -xs1[::-1], -fs1[::-1]
    if xs1.size != xs2.size or float(np.max(np.abs(xs1 - xs2))) > 1e-9:
        raise RuntimeError("one-sided grids failed to align")
    grid = xs2
    prof1 = CorrectorProfile(branch=1, lam=beta, beta=beta, grid=xs1.copy(),
                             f_vals=fs1, burn_in=0.0, cert_bound=p_hi1 - p_lo1)
    prof2 = CorrectorProfile(branch=2, lam=beta, beta=beta, grid=xs2.copy(),
                             f_vals=fs2, burn_in=0.0, cert_bound=p_hi2 - p_lo2)

    z1, z2 = find_low_slope_points((prof1, prof2), env, G, delta, hill, order)
    z_from, z_to = (z2, z1) if order == "21" else (z1, z2)
    # junctions live on grid nodes: work with indices so the pieces, the
    # bridge endpoints, and the s-coordinates all refer to the same node
    h = float(grid[1] - grid[0])
    i_from = int(round((z_from - grid[0]) / h))
    i_to = int(round((z_to - grid[0]) / h))
    s_grid = s_at(env, grid)
    s_from = float(s_grid[i_from])
    s_to = float(s_grid[i_to])
    ds = s_to - s_from
    s_budget = (G.branch_inverse(2, 3 * delta) - G.branch_inverse(1, 3 * delta) + 1.0) / delta
    if ds <= max(s_budget, 2.0):
        raise GlueError(
            f"junction s-gap {ds:g} below the bridge budget "
            f"{max(s_budget, 2.0):g}; hill too short for delta = {delta:g}")

    f_left, f_right = (fs2, fs1) if order == "21" else (fs1, fs2)
    p_from = float(f_left[i_from])
    p_to = float(f_right[i_to])

    # ds-derivatives of the corrector pieces at the junctions (exact ODE)
    _, v_j = sample_many(env, grid[[i_from, i_to]])
    m_from = beta * (1.0 - v_j[0]) - float(G(np.array([p_from]))[0])
    m_to = beta * (1.0 - v_j[1]) - float(G(np.array([p_to]))[0])
    m_core = (p_to - p_from) / ds

    idx = np.arange(grid.size)
    g = np.where(idx <= i_from, f_left, f_right).astype(np.float64)
    mid = (idx > i_from) & (idx < i_to)
    sm = s_grid[mid]
    gm = np.empty(sm.size)
    dgm = np.empty(sm.size)  # d/ds derivatives, for the a posteriori check
    zone0 = sm <= s_from + 1.0
    zone1 = sm >= s_to - 1.0
    core = ~(zone0 | zone1)
    av0 = p_from + m_core * 1.0
    av1 = p_to - m_core * 1.0
    gm[core] = p_from + m_core * (sm[core] - s_from)
    dgm[core] = m_core
    v0, d0 = _hermite(sm[zone0] - s_from, p_from, m_from, av0, m_core)
    gm[zone0] = v0
    dgm[zone0] = d0
    v1, d1 = _hermite((sm[zone1] - (s_to - 1.0)), av1, m_core, p_to, m_to)
    gm[zone1] = v1
    dgm[zone1] = d1
    g[mid] = gm

    # a posteriori bridge bounds (the 3-delta margins absorb blending overshoot)
    slack = 1e-9
    gmax = float(np.max(G(gm))) if gm.size else 0.0
    if gmax > 3.0 * delta + slack:
        raise GlueError(
            f"bridge violates G(g) <= 3 delta: max G(g) = {gmax:g} > {3 * delta:g}")
    if dgm.size and (float(dgm.min()) < -2.0 * delta - slack
                     or float(dgm.max()) > delta + slack):
        raise GlueError(
            f"bridge violates -2 delta <= a g' <= delta: range "
            f"[{float(dgm.min()):g}, {float(dgm.max()):g}] vs [{-2 * delta:g}, {delta:g}]")

    res = residual_series(env, grid, g, G, beta)
    band = (float(res.min()), float(res.max()))
    return GluedProfile(order=order, delta=delta, beta=beta, z1=z1, z2=z2,
                        grid=grid, f_vals=g, residual_band=band)


# ============================================================
# Serialization
# ============================================================

def save_profile(prof: CorrectorProfile, path: str) -> None:
    buf = io.StringIO()
    buf.write(f"# branch {prof.branch}\n")
    buf.write(f"# lambda {prof.lam!r}\n")
    buf.write(f"# beta {prof.beta!r}\n")
    buf.write(f"# burn_in {prof.burn_in!r}\n")
    buf.write(f"# cert_bound {prof.cert_bound!r}\n")
    buf.write("x,f\n")
    for x, f in zip(prof.grid.tolist(), prof.f_vals.tolist()):
        buf.write(f"{x!r},{f!r}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_profile(path: str) -> CorrectorProfile:
    meta: dict[str, float] = {}
    xs = []
    fs = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, rest = line[1:].strip().partition(" ")
                meta[key] = float(rest)
                continue
            if line.startswith("x,"):
                continue
            sx, sf = line.split(",")
            xs.append(float(sx))
            fs.append(float(sf))
    for key in ("branch", "lambda", "beta", "burn_in", "cert_bound"):
        if key not in meta:
            raise ValueError(f"{path}: missing header field {key}")
    return CorrectorProfile(branch=int(meta["branch"]), lam=meta["lambda"],
                            beta=meta["beta"], grid=np.asarray(xs),
                            f_vals=np.asarray(fs), burn_in=meta["burn_in"],
                            cert_bound=meta["cert_bound"])
