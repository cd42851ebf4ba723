"""Effective Hamiltonian assembly: branch inversion and the flat piece.

The homogenized equation reads ``du/dt = Hbar(du/dx)``.  In a medium
whose potential keeps returning to near-maximal stretches, Hbar has two
strictly monotone branches -- obtained by inverting the slope averages
``lam -> theta_i(lam)`` of the one-sided correctors -- joined by an
exactly flat piece at height ``beta`` on ``(theta1(beta), theta2(beta))``.

Slope averages carry Monte Carlo error, so the inversion bisects on the
level with its tolerance measured in theta (the observable we actually
estimate); every returned level comes with a bracketing interval
``[lam_lo, lam_hi]``.

Disorder-free (constant) media are special-cased throughout: their
correctors are constants, so every inversion is the closed form
``lam = G(theta) + beta*v0`` and the flat piece degenerates to the
single slope 0 at height ``beta*v0``.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .corrector import ThetaEstimate, estimate_theta
from .environment import EnvRealization
from .errors import CertificateError, ConfigError, FlatPieceError

__all__ = [
    "LambdaInversion",
    "EffectiveH",
    "invert_theta",
    "build_effective_H",
    "effective_reference",
    "kappa_tilde",
    "inverse_modulus",
    "save_effective",
]


@dataclass(frozen=True)
class LambdaInversion:
    """One inverted level: theta_hat(lam) matched the target slope.

    ``[lam_lo, lam_hi]`` is the bisection bracket at acceptance;
    ``theta_at_lam`` and ``ci`` are the final slope estimate and its
    batch-means half-width.  ``n_evals`` counts slope estimates spent.
    """

    branch: int
    theta: float
    lam: float
    lam_lo: float
    lam_hi: float
    theta_at_lam: float
    ci: float
    n_evals: int


@dataclass(frozen=True)
class EffectiveH:
    """Piecewise effective Hamiltonian: monotone branches + flat piece.

    Branch tables are float arrays with columns
    ``(theta, lam, lam_lo, lam_hi)`` sorted by theta.  ``flat_value`` is
    ``beta`` for random media (whose potential sup is 1) and ``beta*v0``
    for constant media; the flat piece is that exact constant, only the
    endpoints ``theta1_beta``/``theta2_beta`` are statistical.
    """

    beta: float
    theta1_beta: float
    theta1_ci: float
    theta2_beta: float
    theta2_ci: float
    branch1_table: np.ndarray
    branch2_table: np.ndarray
    flat_thetas: np.ndarray
    flat_value: float
    theta_tol: float
    lambda_tol: float

    def __post_init__(self):
        for arr in (self.branch1_table, self.branch2_table, self.flat_thetas):
            arr.setflags(write=False)

    def branch_of(self, theta: float) -> str:
        if theta > self.theta2_beta:
            return "right"
        if theta < self.theta1_beta:
            return "left"
        return "flat"

    def _interp(self, theta: float, col: int) -> float:
        side = self.branch_of(theta)
        if side == "flat":
            return self.flat_value
        if side == "right":
            tab = self.branch2_table
            xp = np.concatenate(([self.theta2_beta], tab[:, 0]))
            fp = np.concatenate(([self.flat_value], tab[:, col]))
            if theta > xp[-1]:
                raise ValueError(
                    f"theta={theta:g} beyond the right branch table "
                    f"(max {xp[-1]:g}); rebuild with a wider grid")
        else:
            tab = self.branch1_table
            xp = np.concatenate((tab[:, 0], [self.theta1_beta]))
            fp = np.concatenate((tab[:, col], [self.flat_value]))
            if theta < xp[0]:
                raise ValueError(
                    f"theta={theta:g} beyond the left branch table "
                    f"(min {xp[0]:g}); rebuild with a wider grid")
        return float(np.interp(theta, xp, fp))

    def value(self, theta: float) -> float:
        """Hbar(theta): flat constant inside, monotone interpolation outside."""
        return self._interp(float(theta), 1)

    def interval(self, theta: float) -> tuple[float, float]:
        """(lo, hi) bracket for Hbar(theta) from the bisection intervals."""
        theta = float(theta)
        return self._interp(theta, 2), self._interp(theta, 3)


# ============================================================
# Rate-bound constants (pure functions of G)
# ============================================================

def kappa_tilde(G, lam: float, beta: float, branch: int = 2) -> float:
    """Branch Lipschitz constant controlling how slowly theta moves.

    Taken on the slope interval that the corrector plus a unit of extra
    level can reach: for branch 2 this is
    ``[G2^{-1}(lam-beta), G2^{-1}(lam+1)]``.  Along the branch,
    ``theta2(lam+e) - theta2(lam) >= e / kappa_tilde``.
    """
    lam = float(lam)
    y_lo = max(lam - float(beta), 0.0)
    if branch == 2:
        iv = (G.branch_inverse(2, y_lo), G.branch_inverse(2, lam + 1.0))
    elif branch == 1:
        iv = (G.branch_inverse(1, lam + 1.0), G.branch_inverse(1, y_lo))
    else:
        raise ValueError(f"branch must be 1 or 2, got {branch}")
    return float(G.lipschitz_on(iv))


def inverse_modulus(G, lam: float, beta: float, eps: float,
                    branch: int = 2, n: int = 2049) -> float:
    """Largest jump of the branch inverse over a level step ``eps``.

    Grid supremum of ``|G_b^{-1}(y+eps) - G_b^{-1}(y)|`` for
    ``y, y+eps`` in ``[lam-beta, lam+1]``; the matching upper rate is
    ``theta2(lam+eps) - theta2(lam) <= inverse_modulus(...)``.
    """
    eps = float(eps)
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    lo = max(float(lam) - float(beta), 0.0)
    hi = float(lam) + 1.0
    ys = np.linspace(lo, hi - eps, n)
    return float(max(abs(G.branch_inverse(branch, y + eps)
                         - G.branch_inverse(branch, y)) for y in ys))


# ============================================================
# Branch inversion
# ============================================================

def _invert_constant(env: EnvRealization, G, beta: float, theta: float,
                     branch: int) -> LambdaInversion:
    v0 = float(env.v_vals[0])
    s = 1.0 if branch == 2 else -1.0
    if s * theta < 0.0:
        raise FlatPieceError(
            f"theta={theta:g} is on the wrong side of the degenerate flat "
            f"point 0 for branch {branch}")
    lam = float(G(theta)) + beta * v0
    return LambdaInversion(branch=branch, theta=float(theta), lam=lam,
                           lam_lo=lam, lam_hi=lam, theta_at_lam=float(theta),
                           ci=0.0, n_evals=0)


def invert_theta(env: EnvRealization, G, beta: float, theta: float,
                 branch: int, tol: float, *, X: float = 500.0,
                 n_batches: int = 10, dx: float = 0.01,
                 profile_tol: float = 1e-6,
                 endpoint: ThetaEstimate | None = None,
                 endpoint_tol: float = 1e-2,
                 max_evals: int = 200) -> LambdaInversion:
    """Level lam on the requested branch with theta_branch(lam) = theta.

    Monotone bisection on lam, with the stopping rule measured in theta:
    accept mid once |theta_hat(mid) - theta| <= tol.  The slope must sit
    at or beyond the flat endpoint theta_branch(beta) (up to the
    endpoint's ci); strictly inside the flat piece there is no preimage
    and the caller should use the flat value instead.

    ``endpoint`` lets callers reuse a lam=beta estimate across many
    inversions; when omitted it is computed here with ``endpoint_tol``
    as the burn-in tolerance (the lam=beta contraction is slow, so a
    loose burn-in keeps the window requirement modest).
    """
    beta = float(beta)
    theta = float(theta)
    tol = float(tol)
    if branch not in (1, 2):
        raise ValueError(f"branch must be 1 or 2, got {branch}")
    if beta <= 0.0:
        raise ValueError(f"beta must be positive, got {beta}")
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    if env.kind == "constant":
        return _invert_constant(env, G, beta, theta, branch)

    s = 1.0 if branch == 2 else -1.0
    if endpoint is None:
        endpoint = estimate_theta(env, G, beta, beta, branch, X=X,
                                  n_batches=n_batches, tol=endpoint_tol,
                                  dx=dx)
    if endpoint.branch != branch or endpoint.lam != beta:
        raise ValueError("endpoint estimate must be this branch at lam = beta")
    if s * theta < s * endpoint.mean - endpoint.ci_halfwidth:
        raise FlatPieceError(
            f"theta={theta:g} lies inside the flat piece (branch-{branch} "
            f"endpoint {endpoint.mean:.6g} +/- {endpoint.ci_halfwidth:.2g}); "
            f"Hbar = beta there")
    if s * theta <= s * endpoint.mean:
        # at (or a ci-hair below) the endpoint: the level is beta itself
        if endpoint.ci_halfwidth > tol:
            raise CertificateError(
                f"endpoint ci {endpoint.ci_halfwidth:.3g} exceeds the "
                f"requested theta tolerance {tol:.3g}: grow X")
        return LambdaInversion(branch=branch, theta=theta, lam=beta,
                               lam_lo=beta, lam_hi=beta,
                               theta_at_lam=endpoint.mean,
                               ci=endpoint.ci_halfwidth, n_evals=0)

    n_evals = 0

    def measure(lam: float) -> ThetaEstimate:
        nonlocal n_evals
        n_evals += 1
        if n_evals > max_evals:
            raise CertificateError(
                f"inversion exceeded {max_evals} slope estimates")
        est = estimate_theta(env, G, beta, lam, branch, X=X,
                             n_batches=n_batches, tol=profile_tol, dx=dx)
        if est.ci_halfwidth > tol:
            raise CertificateError(
                f"batch-means ci {est.ci_halfwidth:.3g} at lam={lam:.6g} "
                f"exceeds the requested theta tolerance {tol:.3g}: grow X")
        return est

    # G(theta) + beta already bounds the level from above (the bracket's
    # lower edge at that level is theta itself); the doubling loop only
    # mops up statistical wobble.
    lo = beta
    hi = beta + max(float(G(theta)), tol)
    est_hi = measure(hi)
    while s * est_hi.mean < s * theta:
        hi = beta + 2.0 * (hi - beta)
        est_hi = measure(hi)
    if abs(est_hi.mean - theta) <= tol:
        return LambdaInversion(branch=branch, theta=theta, lam=hi,
                               lam_lo=lo, lam_hi=hi,
                               theta_at_lam=est_hi.mean,
                               ci=est_hi.ci_halfwidth, n_evals=n_evals)

    while hi - lo > 1e-12 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        est = measure(mid)
        if abs(est.mean - theta) <= tol:
            return LambdaInversion(branch=branch, theta=theta, lam=mid,
                                   lam_lo=lo, lam_hi=hi,
                                   theta_at_lam=est.mean,
                                   ci=est.ci_halfwidth, n_evals=n_evals)
        if s * est.mean < s * theta:
            lo = mid
        else:
            hi = mid
    # bracket collapsed to rounding before the theta tolerance was met:
    # accept only if the residual mismatch is explained by the ci
    mid = 0.5 * (lo + hi)
    est = measure(mid)
    if abs(est.mean - theta) <= tol + est.ci_halfwidth:
        return LambdaInversion(branch=branch, theta=theta, lam=mid,
                               lam_lo=lo, lam_hi=hi, theta_at_lam=est.mean,
                               ci=est.ci_halfwidth, n_evals=n_evals)
    raise CertificateError(
        f"bisection exhausted level resolution with |theta_hat - theta| = "
        f"{abs(est.mean - theta):.3g} > tol = {tol:.3g}: the slope estimate "
        f"is biased beyond its ci; tighten profile_tol or grow X")


# ============================================================
# Assembly
# ============================================================

def _invert_task(args):
    (env, G, beta, theta, branch, tol, X, n_batches, dx, profile_tol,
     endpoint) = args
    return invert_theta(env, G, beta, theta, branch, tol, X=X,
                        n_batches=n_batches, dx=dx, profile_tol=profile_tol,
                        endpoint=endpoint)


def build_effective_H(env: EnvRealization, G, beta: float, theta_grid,
                      tol: float, *, X: float = 500.0,
                      endpoint_X: float | None = None, n_batches: int = 10,
                      dx: float = 0.01, profile_tol: float = 1e-6,
                      endpoint_tol: float = 1e-2,
                      workers: int = 1) -> EffectiveH:
    """Assemble Hbar on a slope grid: branch tables plus the flat piece.

    Estimates the flat endpoints theta_i(beta) first (the lam = beta
    estimates are reused by every inversion), then inverts each grid
    slope strictly outside (theta1, theta2) on its branch.  Grid slopes
    inside the estimated flat interval are carried as flat rows at the
    exact flat value.  The grid must reach beyond both endpoints.

    ``workers > 1`` farms the independent slope inversions out to a
    process pool; results are merged in grid order, so the output is
    identical to the sequential run.
    """
    grid = np.unique(np.asarray(theta_grid, dtype=np.float64))
    if grid.size == 0:
        raise ConfigError("theta grid is empty")
    if not np.all(np.isfinite(grid)):
        raise ConfigError("theta grid must be finite")
    beta = float(beta)
    tol = float(tol)

    if env.kind == "constant":
        v0 = float(env.v_vals[0])
        flat_value = beta * v0
        t1 = t2 = 0.0
        ci1 = ci2 = 0.0
        ep1 = ep2 = None
    else:
        flat_value = beta
        eX = X if endpoint_X is None else float(endpoint_X)
        ep2 = estimate_theta(env, G, beta, beta, 2, X=eX,
                             n_batches=n_batches, tol=endpoint_tol, dx=dx)
        ep1 = estimate_theta(env, G, beta, beta, 1, X=eX,
                             n_batches=n_batches, tol=endpoint_tol, dx=dx)
        t1, ci1 = ep1.mean, ep1.ci_halfwidth
        t2, ci2 = ep2.mean, ep2.ci_halfwidth
        if not (t1 < 0.0 < t2):
            raise CertificateError(
                f"flat endpoints must straddle 0, got theta1 = {t1:.6g}, "
                f"theta2 = {t2:.6g}")

    left = grid[grid < t1]
    right = grid[grid > t2]
    flat = grid[(grid >= t1) & (grid <= t2)]
    if left.size == 0 or right.size == 0:
        raise ConfigError(
            f"theta grid must reach beyond both flat endpoints "
            f"({t1:.4g}, {t2:.4g})")

    tasks = [(env, G, beta, float(th), 1, tol, X, n_batches, dx,
              profile_tol, ep1) for th in left]
    tasks += [(env, G, beta, float(th), 2, tol, X, n_batches, dx,
               profile_tol, ep2) for th in right]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            invs = list(pool.map(_invert_task, tasks))
    else:
        invs = [_invert_task(t) for t in tasks]

    rows1 = np.array([[i.theta, i.lam, i.lam_lo, i.lam_hi]
                      for i in invs if i.branch == 1], dtype=np.float64)
    rows2 = np.array([[i.theta, i.lam, i.lam_lo, i.lam_hi]
                      for i in invs if i.branch == 2], dtype=np.float64)
    rows1 = rows1.reshape(-1, 4)
    rows2 = rows2.reshape(-1, 4)

    if np.any(np.diff(rows1[:, 1]) >= 0.0):
        raise CertificateError(
            "left branch table is not strictly decreasing; grow X or "
            "spread the theta grid")
    if np.any(np.diff(rows2[:, 1]) <= 0.0):
        raise CertificateError(
            "right branch table is not strictly increasing; grow X or "
            "spread the theta grid")
    if np.any(rows1[:, 1] < flat_value - 1e-12) or \
            np.any(rows2[:, 1] < flat_value - 1e-12):
        raise CertificateError("branch levels fell below the flat value")
    if rows1[0, 1] <= flat_value or rows2[-1, 1] <= flat_value:
        raise CertificateError(
            "branch tables do not rise above the flat value at the grid "
            "ends (coercivity check)")

    widths = np.concatenate((rows1[:, 3] - rows1[:, 2],
                             rows2[:, 3] - rows2[:, 2]))
    return EffectiveH(beta=beta, theta1_beta=float(t1), theta1_ci=float(ci1),
                      theta2_beta=float(t2), theta2_ci=float(ci2),
                      branch1_table=rows1, branch2_table=rows2,
                      flat_thetas=flat, flat_value=flat_value,
                      theta_tol=tol, lambda_tol=float(widths.max(initial=0.0)))


def effective_reference(env: EnvRealization, G, beta: float, theta: float,
                        tol: float, *, X: float = 500.0,
                        n_batches: int = 10, dx: float = 0.01,
                        profile_tol: float = 1e-6,
                        endpoint_tol: float = 1e-2) -> tuple[float, float]:
    """Hbar(theta) with an honest half-width, for a single slope.

    Returns ``(value, half)``: on the flat piece the value is exact and
    half = 0.  On a branch, a level increment e moves the slope by at
    least e / kappa_tilde, so matching the slope to tol + ci pins the
    level to half = kappa_tilde * (tol + ci) -- usually far tighter
    than the leftover bisection bracket.
    """
    beta = float(beta)
    theta = float(theta)
    if env.kind == "constant":
        return float(G(theta)) + beta * float(env.v_vals[0]), 0.0
    ep2 = estimate_theta(env, G, beta, beta, 2, X=X, n_batches=n_batches,
                         tol=endpoint_tol, dx=dx)
    ep1 = estimate_theta(env, G, beta, beta, 1, X=X, n_batches=n_batches,
                         tol=endpoint_tol, dx=dx)
    if ep1.mean < theta < ep2.mean:
        return beta, 0.0
    branch = 2 if theta >= ep2.mean else 1
    inv = invert_theta(env, G, beta, theta, branch, tol, X=X,
                       n_batches=n_batches, dx=dx, profile_tol=profile_tol,
                       endpoint=ep2 if branch == 2 else ep1)
    half = kappa_tilde(G, inv.lam, beta, branch=branch) * (tol + inv.ci)
    return inv.lam, half


# ============================================================
# Persistence
# ============================================================

def save_effective(eff: EffectiveH, path: str) -> None:
    """Write `theta,H,H_lo,H_hi,branch` rows sorted by theta."""
    rows = []
    for th, lam, lo, hi in eff.branch1_table:
        rows.append((float(th), float(lam), float(lo), float(hi), "left"))
    for th in eff.flat_thetas:
        rows.append((float(th), eff.flat_value, eff.flat_value,
                     eff.flat_value, "flat"))
    for th, lam, lo, hi in eff.branch2_table:
        rows.append((float(th), float(lam), float(lo), float(hi), "right"))
    rows.sort(key=lambda r: r[0])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("theta,H,H_lo,H_hi,branch\n")
        for th, lam, lo, hi, br in rows:
            fh.write(f"{th!r},{lam!r},{lo!r},{hi!r},{br}\n")
