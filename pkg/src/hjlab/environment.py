"""Stationary random media on finite windows.

A medium is a pair (a, V): a diffusion coefficient a with values in
(0, 1] and a potential V with values in [0, 1], sampled on a regular
grid over a window [x_min, x_max] and interpolated linearly in between.
Alongside the samples each realization carries the scaled coordinate

    s(x) = integral from x_min to x of dy / a(y)

computed with the trapezoid rule on the same grid.  Because a <= 1,
s-increments dominate x-increments; several certified lengths in the
corrector machinery are stated in s-units and converted back through
this table.

Every generator is a deterministic function of (seed, absolute
coordinate): regenerating the same seed on a translated window
reproduces the same underlying realization.  That makes lattice shifts
exact and realizations bit-identical across runs, which the rest of the
laboratory relies on for reproducibility.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import ndtri

from .errors import ConfigError, WindowError

__all__ = [
    "EnvRealization",
    "HillWitness",
    "generate_env",
    "sample",
    "sample_many",
    "s_at",
    "s_between",
    "find_hill",
    "check_singular_hill",
    "shift",
    "reflect",
    "save_env",
    "load_env",
    "KINDS",
]

# ============================================================
# Deterministic lattice randomness
# ============================================================
# A counter-based 64-bit mixer (splitmix64 constants).  uniform(seed, k)
# depends only on (seed, stream, k), so any window sees the same knot
# values at the same absolute lattice sites.

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)

# stream tags keep the independent fields of one seed decorrelated
_STREAM_V = 0
_STREAM_PHASE = 1
_STREAM_GS_V = 2
_STREAM_GS_A = 3
_STREAM_GS_PHASE_V = 4
_STREAM_GS_PHASE_A = 5
_STREAM_DEPTH = 6
_STREAM_CS_PHASE = 7


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def _lattice_uniform(seed: int, idx, stream: int) -> np.ndarray:
    """iid Uniform(0,1) marks on the integer lattice, vectorized over idx."""
    k = np.asarray(idx, dtype=np.int64)
    # zig-zag so negative sites get distinct counters
    z = np.where(k >= 0, 2 * k, -2 * k - 1).astype(np.uint64)
    with np.errstate(over="ignore"):  # modular 64-bit arithmetic by design
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + _GAMMA * np.uint64(stream + 1))
        bits = _mix64(_mix64(z * _GAMMA + key) + _GAMMA)
    return (bits >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)


def _lattice_normal(seed: int, idx, stream: int) -> np.ndarray:
    u = _lattice_uniform(seed, idx, stream)
    tiny = 2.0 ** -53
    return ndtri(np.clip(u, tiny, 1.0 - tiny))


def _phase(seed: int, stream: int) -> float:
    return float(_lattice_uniform(seed, np.array([0]), stream)[0])


def _bump(u: np.ndarray) -> np.ndarray:
    """Smooth compactly supported kernel, equal to 1 at 0, 0 for |u| >= 1."""
    out = np.zeros_like(u, dtype=np.float64)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui * ui))
    return out


# ============================================================
# Generators
# ============================================================

def _gen_iid_interp(seed: int, params: dict, xs: np.ndarray, dx: float):
    a0 = float(params.get("a0", 1.0))
    if not (0.0 < a0 <= 1.0):
        raise ConfigError(f"iid-interp a0 must lie in (0, 1], got {a0}")
    ph = params.get("phase")
    ph = _phase(seed, _STREAM_PHASE) if ph is None else float(ph)
    t = xs - ph
    m = np.floor(t).astype(np.int64)
    w = t - m
    v0 = _lattice_uniform(seed, m, _STREAM_V)
    v1 = _lattice_uniform(seed, m + 1, _STREAM_V)
    v = (1.0 - w) * v0 + w * v1
    a = np.full_like(xs, a0)
    return a, v


def _gen_periodic(seed: int, params: dict, xs: np.ndarray, dx: float):
    ph = params.get("phase")
    ph = _phase(seed, _STREAM_PHASE) if ph is None else float(ph)
    period = float(params.get("period", 1.0))
    m = int(round(period / dx))
    if m >= 1 and m * dx == period:
        # reduce on the lattice so translation by a whole period is the
        # identity bit-for-bit, not merely up to sin() roundoff
        j = np.rint(xs / dx).astype(np.int64) % m
        xs = j * dx
    v = np.sin(np.pi / period * (xs + ph)) ** 2
    a = np.ones_like(v, dtype=np.float64)
    return a, v


def _gauss_field(seed: int, stream: int, phase_stream: int, params: dict,
                 xs: np.ndarray) -> np.ndarray:
    """Moving average of lattice Gaussians with a compact smooth kernel."""
    ell = float(params.get("corr_len", 2.0))
    h0 = ell / 4.0
    ph = params.get("phase")
    ph = (_phase(seed, phase_stream) if ph is None else float(ph)) * h0
    m_lo = int(math.floor((xs[0] - ph - ell) / h0))
    m_hi = int(math.ceil((xs[-1] - ph + ell) / h0))
    z = np.zeros_like(xs)
    x0, dx = xs[0], xs[1] - xs[0] if xs.size > 1 else 1.0
    for m in range(m_lo, m_hi + 1):
        center = m * h0 + ph
        i0 = max(0, int(math.ceil((center - ell - x0) / dx)))
        i1 = min(xs.size, int(math.floor((center + ell - x0) / dx)) + 1)
        if i0 >= i1:
            continue
        xi = _lattice_normal(seed, np.array([m]), stream)[0]
        z[i0:i1] += xi * _bump((xs[i0:i1] - center) / ell)
    return z


# l2 mass of the kernel on its h0 = ell/4 lattice; normalizes the field variance
_SIGMA0 = math.sqrt(sum(
    float(_bump(np.array([j / 4.0]))[0]) ** 2 for j in range(-4, 5)))


def _gen_gauss_squash(seed: int, params: dict, xs: np.ndarray, dx: float):
    ell = float(params.get("corr_len", 2.0))
    kappa = float(params.get("kappa", 0.2))
    gain = float(params.get("gain", 2.5))
    if ell <= 0:
        raise ConfigError(f"gauss-squash corr_len must be positive, got {ell}")
    if not (0.0 < kappa < 1.0):
        raise ConfigError(f"gauss-squash kappa must lie in (0, 1), got {kappa}")
    if xs[-1] - xs[0] < 2.0 * ell:
        raise WindowError(
            f"window of length {xs[-1] - xs[0]:g} too small for correlation length {ell:g}")
    zv = _gauss_field(seed, _STREAM_GS_V, _STREAM_GS_PHASE_V, params, xs)
    za = _gauss_field(seed, _STREAM_GS_A, _STREAM_GS_PHASE_A, params, xs)
    v = 1.0 / (1.0 + np.exp(-gain * zv / _SIGMA0))
    a = kappa + (1.0 - kappa) / (1.0 + np.exp(-gain * za / _SIGMA0))
    return a, v


def _gen_coupled_singular(seed: int, params: dict, xs: np.ndarray, dx: float):
    # Bumps on the unit lattice: at the k-th center the diffusion dips to a
    # random depth d_k while the potential rises to 1 - d_k, so sites with
    # a <= c and V >= 1 - c occur for every level c down to the smallest
    # realized depth.  Depths are pushed toward 0 (power of a uniform).
    width = float(params.get("bump_width", 0.35))
    dpow = float(params.get("depth_power", 2.0))
    if not (0.0 < width <= 0.49):
        raise ConfigError(f"coupled-singular bump_width must lie in (0, 0.49], got {width}")
    ph = params.get("phase")
    ph = _phase(seed, _STREAM_CS_PHASE) if ph is None else float(ph)
    m = np.round(xs - ph).astype(np.int64)
    u = (xs - ph - m) / width
    d = _lattice_uniform(seed, m, _STREAM_DEPTH) ** dpow
    b = _bump(u)
    a = 1.0 - (1.0 - d) * b
    v = (1.0 - d) * b
    return a, v


def _gen_constant(seed: int, params: dict, xs: np.ndarray, dx: float):
    a0 = float(params.get("a0", 1.0))
    v0 = float(params.get("v0", 0.0))
    if not (0.0 < a0 <= 1.0):
        raise ConfigError(f"constant a0 must lie in (0, 1], got {a0}")
    if not (0.0 <= v0 <= 1.0):
        raise ConfigError(f"constant v0 must lie in [0, 1], got {v0}")
    return np.full_like(xs, a0), np.full_like(xs, v0)


_GENERATORS: dict[str, Callable] = {
    "iid-interp": _gen_iid_interp,
    "gauss-squash": _gen_gauss_squash,
    "periodic": _gen_periodic,
    "coupled-singular": _gen_coupled_singular,
    "constant": _gen_constant,
}

KINDS = tuple(_GENERATORS)


# ============================================================
# Realization container
# ============================================================

@dataclass(frozen=True)
class EnvRealization:
    """One sampled medium: (a, V) on a regular grid plus its s-table.

    Arrays are read-only; treat instances as immutable values.  ``flags``
    marks degenerate constructions (a constant potential never attains
    the full range [0, 1]; reflected realizations cannot be regenerated
    by shifting).
    """

    seed: int
    kind: str
    window: tuple[float, float]
    dx_env: float
    a_vals: np.ndarray
    v_vals: np.ndarray
    s_table: np.ndarray
    interp: str = "linear"
    params: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        for arr in (self.a_vals, self.v_vals, self.s_table):
            arr.setflags(write=False)
        n = self.a_vals.size
        if self.v_vals.size != n or self.s_table.size != n:
            raise ValueError("a_vals, v_vals, s_table must have equal length")
        if n < 2:
            raise ValueError("a realization needs at least two grid points")
        if self.interp != "linear":
            raise ValueError(f"unsupported interpolation {self.interp!r}")
        amin = float(self.a_vals.min())
        if amin <= 0.0 or float(self.a_vals.max()) > 1.0:
            raise ValueError("diffusion coefficient must take values in (0, 1]")
        if float(self.v_vals.min()) < 0.0 or float(self.v_vals.max()) > 1.0:
            raise ValueError("potential must take values in [0, 1]")
        if not np.all(np.isfinite(self.s_table)):
            raise ValueError("s-table must be finite")
        ds = np.diff(self.s_table)
        # slack scales with |s|: increments are recovered by subtraction,
        # so cancellation grows once the table spans large magnitudes
        eps = np.finfo(np.float64).eps
        slack = self.dx_env * 1e-9 + 64.0 * eps * np.maximum(
            np.abs(self.s_table[:-1]), np.abs(self.s_table[1:]))
        if np.any(ds < self.dx_env - slack):
            raise ValueError("s-table increments must dominate dx (a <= 1)")

    @property
    def n(self) -> int:
        return self.a_vals.size

    @property
    def lattice_origin(self) -> int:
        """Index of the first node on the global lattice {j * dx_env}."""
        return int(round(self.window[0] / self.dx_env))

    @property
    def xs(self) -> np.ndarray:
        # nodes live on the global lattice so that windows over the same
        # seed agree bitwise wherever they overlap
        return (self.lattice_origin + np.arange(self.n)) * self.dx_env

    def potential_range(self) -> tuple[float, float]:
        """Empirical (min V, max V) over the window.

        The idealized medium has essential bounds 0 and 1; a finite
        window only approaches them, so consumers that care get the
        realized range instead of a promise.
        """
        return float(self.v_vals.min()), float(self.v_vals.max())


@dataclass(frozen=True)
class HillWitness:
    """A maximal grid interval on which V stays at or above a level h."""

    L1: float
    L2: float
    scaled_length: float
    v_min_on_interval: float


def _build(seed, kind, window, dx_env, a, v, params, flags) -> EnvRealization:
    inv = 1.0 / a
    ds = 0.5 * dx_env * (inv[:-1] + inv[1:])
    s = np.concatenate(([0.0], np.cumsum(ds)))
    return EnvRealization(seed=seed, kind=kind, window=window, dx_env=dx_env,
                          a_vals=a, v_vals=v, s_table=s,
                          params=dict(params), flags=flags)


def generate_env(kind: str, seed: int, window: tuple[float, float],
                 dx_env: float, params: dict | None = None) -> EnvRealization:
    """Sample the medium ``kind`` on ``window`` with grid step ``dx_env``.

    Grid nodes are the restriction of the global lattice {j * dx_env} to
    the window (endpoints snapped outward by less than one step).  This
    keeps node coordinates, and therefore sampled values, bit-identical
    between any two windows over the same seed wherever they overlap.
    """
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown environment kind {kind!r}; known: {', '.join(KINDS)}")
    x_min, x_max = float(window[0]), float(window[1])
    if not (x_max > x_min):
        raise ConfigError(f"empty window {window}")
    if dx_env <= 0:
        raise ConfigError(f"dx_env must be positive, got {dx_env}")
    params = dict(params or {})
    j0 = int(math.floor(x_min / dx_env + 1e-9))
    j1 = int(math.ceil(x_max / dx_env - 1e-9))
    if j1 <= j0:
        j1 = j0 + 1
    xs = (j0 + np.arange(j1 - j0 + 1)) * dx_env
    a, v = _GENERATORS[kind](int(seed), params, xs, dx_env)
    flags = ("degenerate-potential",) if kind == "constant" else ()
    return _build(int(seed), kind, (float(xs[0]), float(xs[-1])), dx_env, a, v, params, flags)


# ============================================================
# Sampling and the scaled coordinate
# ============================================================

def _locate(env: EnvRealization, x) -> tuple[np.ndarray, np.ndarray]:
    """Cell index and interpolation weight for points x; exact at nodes."""
    xq = np.asarray(x, dtype=np.float64)
    x0, x1 = env.window
    tol = 1e-9 * max(1.0, abs(x0), abs(x1))
    if np.any(xq < x0 - tol) or np.any(xq > x1 + tol):
        raise WindowError(
            f"sample point outside window [{x0:g}, {x1:g}]")
    t = (xq - x0) / env.dx_env
    i = np.clip(np.floor(t).astype(np.int64), 0, env.n - 2)
    w = np.clip(t - i, 0.0, 1.0)
    # snap to the node when the query is a node up to roundoff
    near = np.rint(t)
    hit = np.abs(t - near) <= 1e-9
    i = np.where(hit, np.clip(near.astype(np.int64), 0, env.n - 2), i)
    w = np.where(hit, np.where(near >= env.n - 1, 1.0, 0.0), w)
    return i, w


def sample_many(env: EnvRealization, x) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (a, V) at arbitrary points of the window."""
    i, w = _locate(env, x)
    a = (1.0 - w) * env.a_vals[i] + w * env.a_vals[i + 1]
    v = (1.0 - w) * env.v_vals[i] + w * env.v_vals[i + 1]
    return a, v


def sample(env: EnvRealization, x: float) -> tuple[float, float]:
    a, v = sample_many(env, np.array([x]))
    return float(a[0]), float(v[0])


def s_at(env: EnvRealization, x) -> np.ndarray:
    """Scaled coordinate s(x), consistent with the stored table at nodes.

    Off-node points get the partial trapezoid contribution of the cell,
    so s_at is a single fixed function of x and between-point
    differences are exactly additive.
    """
    i, w = _locate(env, x)
    xq = np.asarray(x, dtype=np.float64)
    a_x = (1.0 - w) * env.a_vals[i] + w * env.a_vals[i + 1]
    x_node = env.window[0] + env.dx_env * i
    partial = (xq - x_node) * 0.5 * (1.0 / env.a_vals[i] + 1.0 / a_x)
    return env.s_table[i] + partial


def s_between(env: EnvRealization, x1: float, x2: float) -> float:
    """Trapezoid value of the integral of 1/a over [x1, x2]."""
    if x2 < x1:
        raise ValueError("s_between expects x1 <= x2")
    lo, hi = s_at(env, np.array([x1, x2]))
    return float(hi - lo)


# ============================================================
# Hills
# ============================================================

def find_hill(env: EnvRealization, h: float, C: float) -> HillWitness | None:
    """First maximal grid interval with V >= h and s-length >= C.

    One left-to-right sweep over the stored samples; returns None when no
    maximal interval is long enough in scaled length.
    """
    if not (0.0 < h < 1.0):
        raise ValueError(f"hill level h must lie in (0, 1), got {h}")
    if C <= 0:
        raise ValueError(f"hill s-length C must be positive, got {C}")
    mask = env.v_vals >= h
    if not mask.any():
        return None
    m = mask.astype(np.int8)
    starts = np.flatnonzero(np.diff(m) == 1) + 1
    stops = np.flatnonzero(np.diff(m) == -1)
    if mask[0]:
        starts = np.concatenate(([0], starts))
    if mask[-1]:
        stops = np.concatenate((stops, [env.n - 1]))
    j0 = env.lattice_origin
    for i, j in zip(starts, stops):
        slen = float(env.s_table[j] - env.s_table[i])
        if slen >= C:
            return HillWitness(
                L1=float((j0 + i) * env.dx_env),
                L2=float((j0 + j) * env.dx_env),
                scaled_length=slen,
                v_min_on_interval=float(env.v_vals[i:j + 1].min()),
            )
    return None


def check_singular_hill(env: EnvRealization, c: float) -> float | None:
    """First grid point where a <= c and V >= 1 - c, or None."""
    if not (0.0 < c < 1.0):
        raise ValueError(f"singular level c must lie in (0, 1), got {c}")
    idx = np.flatnonzero((env.a_vals <= c) & (env.v_vals >= 1.0 - c))
    if idx.size == 0:
        return None
    return float((env.lattice_origin + idx[0]) * env.dx_env)


# ============================================================
# Lattice transformations
# ============================================================

def shift(env: EnvRealization, z: float) -> EnvRealization:
    """Same underlying realization observed from a window moved by z.

    Implemented by regenerating the deterministic process on the
    translated lattice; grid nodes shared by both windows carry
    identical values.
    """
    if "reflected" in env.flags:
        raise ConfigError("reflected realizations carry no generator; cannot shift")
    return generate_env(env.kind, env.seed,
                        (env.window[0] + z, env.window[1] + z),
                        env.dx_env, env.params)


def reflect(env: EnvRealization) -> EnvRealization:
    """Space-reversed view x -> -x, used for branch-1 symmetry checks."""
    a = env.a_vals[::-1].copy()
    v = env.v_vals[::-1].copy()
    return _build(env.seed, env.kind, (-env.window[1], -env.window[0]),
                  env.dx_env, a, v, env.params, env.flags + ("reflected",))


# ============================================================
# Serialization
# ============================================================
# Columnar text, one row per grid node.  Floats are written with repr,
# which round-trips every double exactly.

def save_env(env: EnvRealization, path: str) -> None:
    buf = io.StringIO()
    buf.write(f"# kind {env.kind}\n")
    buf.write(f"# seed {env.seed}\n")
    buf.write(f"# dx_env {env.dx_env!r}\n")
    if env.params:
        buf.write(f"# params {json.dumps(env.params, sort_keys=True)}\n")
    if env.flags:
        buf.write(f"# flags {json.dumps(list(env.flags))}\n")
    buf.write("x,a,V,s\n")
    xs = env.xs.tolist()
    a = env.a_vals.tolist()
    v = env.v_vals.tolist()
    s = env.s_table.tolist()
    for k in range(env.n):
        buf.write(f"{xs[k]!r},{a[k]!r},{v[k]!r},{s[k]!r}\n")
    with open(path, "w") as fh:
        fh.write(buf.getvalue())


def load_env(path: str) -> EnvRealization:
    kind = None
    seed = None
    dx_env = None
    params: dict = {}
    flags: tuple[str, ...] = ()
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, rest = line[1:].strip().partition(" ")
                if key == "kind":
                    kind = rest.strip()
                elif key == "seed":
                    seed = int(rest)
                elif key == "dx_env":
                    dx_env = float(rest)
                elif key == "params":
                    params = json.loads(rest)
                elif key == "flags":
                    flags = tuple(json.loads(rest))
                continue
            if line.startswith("x,"):
                continue
            rows.append([float(tok) for tok in line.split(",")])
    if kind is None or seed is None or dx_env is None:
        raise ConfigError(f"{path}: missing kind/seed/dx_env header")
    if not rows:
        raise ConfigError(f"{path}: no samples")
    data = np.asarray(rows, dtype=np.float64)
    xs, a, v, s = data.T
    env = EnvRealization(seed=seed, kind=kind, window=(float(xs[0]), float(xs[-1])),
                         dx_env=dx_env, a_vals=a.copy(), v_vals=v.copy(),
                         s_table=s.copy(), params=params, flags=flags)
    return env
