"""Command-line driver: config files in, CSV tables + JSON sidecars out.

Configs are INI files with one section per concern ([env], [hamiltonian],
[model], plus a section named after the subcommand).  Every command is a
pure function of its config: rerunning writes byte-identical data files.
Exit codes: 0 success, 1 scientific failure (a certified invariant did
not hold), 2 configuration/usage error.
"""

import argparse
import configparser
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .corrector import (
    build_glued_profile,
    corrector_profile,
    estimate_theta,
    save_profile,
)
from .effective import build_effective_H, effective_reference, save_effective
from .environment import (
    KINDS,
    check_singular_hill,
    find_hill,
    generate_env,
    save_env,
)
from .errors import CertificateError, ConfigError, HillError, ScientificError
from .hamiltonian import GrowthCertificate, branch_inverse, make_G, validate_growth
from .pde import SchemeConfig, SweepResult, homogenize_sweep, residual_probe, save_sweep, stable_dt

COMMANDS = ("gen-env", "corrector", "theta-curve", "effective", "homogenize",
            "hill-check", "probe")


# ------------------------------------------------------------
# config ingestion
# ------------------------------------------------------------

def _floats(text: str) -> list[float]:
    vals = [float(t) for t in text.replace(",", " ").split()]
    if not vals:
        raise ConfigError(f"expected at least one number, got {text!r}")
    return vals


def _maybe_number(text: str):
    try:
        f = float(text)
    except ValueError:
        return text
    return int(f) if f == int(f) and "." not in text and "e" not in text.lower() else f


@dataclass
class RunConfig:
    """Validated run description; commands read only from here."""

    command: str
    env_kind: str
    env_seed: int
    window: tuple[float, float]
    dx_env: float
    env_params: dict
    G: object
    growth: GrowthCertificate | None
    beta: float
    params: dict
    out_dir: Path
    workers: int
    echo: dict

    def make_env(self, window=None):
        return generate_env(self.env_kind, self.env_seed,
                            self.window if window is None else window,
                            self.dx_env, params=self.env_params or None)


def _require(section, key, kind=str):
    if key not in section:
        raise ConfigError(f"missing required key {key!r} in [{section.name}]")
    raw = section[key]
    try:
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return int(f)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(
            f"key {key!r} in [{section.name}] must be {kind.__name__}, "
            f"got {raw!r}") from None
    return raw


def load_config(path: str, command: str, out_flag: str | None,
                workers: int, seed_override: int | None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    read = cp.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    if "env" not in cp:
        raise ConfigError("config needs an [env] section")
    env_sec = cp["env"]
    kind = _require(env_sec, "kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown env kind {kind!r}; choose from {KINDS}")
    seed = _require(env_sec, "seed", int)
    if seed_override is not None:
        seed = seed_override
    window = _floats(_require(env_sec, "window"))
    if len(window) != 2 or window[0] >= window[1]:
        raise ConfigError(f"window must be two increasing numbers, got {window}")
    dx_env = _require(env_sec, "dx_env", float)
    if dx_env <= 0:
        raise ConfigError(f"dx_env must be positive, got {dx_env}")
    env_params = {k: _maybe_number(v) for k, v in env_sec.items()
                  if k not in ("kind", "seed", "window", "dx_env")}

    g_params: dict = {}
    family = "power"
    growth = None
    if "hamiltonian" in cp:
        h = cp["hamiltonian"]
        family = h.get("family", "power")
        growth_keys = [k for k in h if k.startswith("growth_")]
        if growth_keys:
            for need in ("growth_gamma", "growth_c1", "growth_c2"):
                if need not in h:
                    raise ConfigError(
                        f"growth certificate needs {need} in [hamiltonian]")
            growth = GrowthCertificate(gamma=float(h["growth_gamma"]),
                                       c1=float(h["growth_c1"]),
                                       c2=float(h["growth_c2"]))
        for k, v in h.items():
            if k == "family" or k.startswith("growth_"):
                continue
            g_params[k] = v if k == "path" else _maybe_number(v)
    try:
        G = make_G(family, **g_params)
    except (ValueError, KeyError, OSError) as exc:
        raise ConfigError(f"cannot build Hamiltonian: {exc}") from exc

    if "model" not in cp:
        raise ConfigError("config needs a [model] section with beta")
    beta = _require(cp["model"], "beta", float)
    if beta <= 0:
        raise ConfigError(f"beta must be positive, got {beta}")

    params = dict(cp[command]) if command in cp else {}

    # lambda levels below beta are outside every contract; fail before compute
    for key in ("lam", "lams"):
        if key in params:
            for lam in _floats(params[key]):
                if lam < beta - 1e-12:
                    raise ConfigError(
                        f"{key} contains {lam} below beta = {beta}")

    out_dir = Path(out_flag) if out_flag else Path(
        cp["output"]["dir"] if "output" in cp and "dir" in cp["output"]
        else ".")
    if workers < 1:
        raise ConfigError(f"--workers must be >= 1, got {workers}")

    echo = {name: dict(cp[name]) for name in cp.sections()}
    return RunConfig(command=command, env_kind=kind, env_seed=seed,
                     window=(window[0], window[1]), dx_env=dx_env,
                     env_params=env_params, G=G, growth=growth, beta=beta,
                     params=params, out_dir=out_dir, workers=workers,
                     echo=echo)


def _get(params: dict, key: str, default=None, kind=float):
    if key not in params:
        if default is None:
            raise ConfigError(f"missing required key {key!r} in command section")
        return default
    try:
        if kind is float:
            return float(params[key])
        if kind is int:
            return int(float(params[key]))
        if kind is list:
            return _floats(params[key])
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {params[key]!r}") from None
    return params[key]


# ------------------------------------------------------------
# commands (each returns the list of files written)
# ------------------------------------------------------------

def cmd_gen_env(cfg: RunConfig) -> list[Path]:
    env = cfg.make_env()
    out = cfg.out_dir / "env.csv"
    save_env(env, str(out))
    return [out]


def cmd_corrector(cfg: RunConfig) -> list[Path]:
    p = cfg.params
    lam = _get(p, "lam")
    branch = _get(p, "branch", 2, int)
    region = _get(p, "region", kind=list)
    if len(region) != 2:
        raise ConfigError(f"region must be two numbers, got {region}")
    tol = _get(p, "tol", 1e-6)
    dx = _get(p, "dx", 0.01)
    env = cfg.make_env()
    prof = corrector_profile(env, cfg.G, cfg.beta, lam, branch,
                             (region[0], region[1]), tol, dx)
    out = cfg.out_dir / "corrector.csv"
    save_profile(prof, str(out))
    return [out]


def _theta_task(args):
    (env, G, beta, lam, branch, X, n_batches, tol, dx) = args
    if env.kind == "constant":
        # disorder-free corrector slopes are exactly constant
        v0 = float(env.v_vals[0])
        theta = branch_inverse(G, branch, max(lam - beta * v0, 0.0))
        return (lam, theta, 0.0, False)
    est = estimate_theta(env, G, beta, lam, branch, X,
                         n_batches=n_batches, tol=tol, dx=dx)
    return (lam, est.mean, est.ci_halfwidth, est.flagged)


def cmd_theta_curve(cfg: RunConfig) -> list[Path]:
    p = cfg.params
    lams = sorted(set(_get(p, "lams", kind=list)))
    branch = _get(p, "branch", 2, int)
    X = _get(p, "x", 300.0)
    n_batches = _get(p, "n_batches", 10, int)
    tol = _get(p, "tol", 1e-6)
    dx = _get(p, "dx", 0.01)
    env = cfg.make_env()
    tasks = [(env, cfg.G, cfg.beta, lam, branch, X, n_batches, tol, dx)
             for lam in lams]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_theta_task, tasks))
    else:
        rows = [_theta_task(t) for t in tasks]
    rows.sort(key=lambda r: r[0])  # deterministic merge on the sweep key
    out = cfg.out_dir / "theta_curve.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("lam,theta,ci,flagged\n")
        for lam, theta, ci, flagged in rows:
            fh.write(f"{float(lam)!r},{float(theta)!r},{float(ci)!r},"
                     f"{bool(flagged)}\n")
    return [out]


def cmd_effective(cfg: RunConfig) -> list[Path]:
    p = cfg.params
    grid = _get(p, "theta_grid", kind=list)
    tol = _get(p, "tol", 2e-2)
    X = _get(p, "x", 300.0)
    dx = _get(p, "dx", 0.01)
    n_batches = _get(p, "n_batches", 10, int)
    profile_tol = _get(p, "profile_tol", 1e-6)
    endpoint_tol = _get(p, "endpoint_tol", 1e-2)
    env = cfg.make_env()
    eff = build_effective_H(env, cfg.G, cfg.beta, grid, tol, X=X,
                            n_batches=n_batches, dx=dx,
                            profile_tol=profile_tol,
                            endpoint_tol=endpoint_tol, workers=cfg.workers)
    out = cfg.out_dir / "effective.csv"
    save_effective(eff, str(out))
    return [out]


def _sweep_task(args):
    (env, G, beta, theta, eps, scheme, ref) = args
    res = homogenize_sweep(env, G, beta, theta, [eps], scheme, reference=ref)
    return (eps, float(res.values[0]), float(res.domain_sensitivity[0]),
            bool(res.grad_excursion))


def cmd_homogenize(cfg: RunConfig) -> list[Path]:
    if cfg.growth is None:
        raise ConfigError(
            "homogenize requires a growth certificate: set growth_gamma, "
            "growth_c1, growth_c2 in [hamiltonian]")
    report = validate_growth(cfg.G, cfg.growth)
    if not report.passed:
        raise CertificateError(
            "growth certificate failed: margins "
            f"lower={report.lower_margin:.3g}, upper={report.upper_margin:.3g}, "
            f"lipschitz={report.lipschitz_margin:.3g}")

    p = cfg.params
    theta = _get(p, "theta")
    epsilons = sorted(set(_get(p, "epsilons", kind=list)), reverse=True)
    dx = _get(p, "dx", 0.05)
    M = _get(p, "m", 1.0)
    boundary = _get(p, "boundary", "linear", str)
    env = cfg.make_env()
    dt = (_get(p, "dt", 0.0) or
          stable_dt(env, cfg.G, cfg.beta, theta, dx))
    scheme = SchemeConfig(dx=dx, dt=dt, M=M, T=1.0, theta=theta,
                          boundary=boundary)

    if "reference" in p:
        ref = _get(p, "reference")
    else:
        ref, _ = effective_reference(env, cfg.G, cfg.beta, theta,
                                     _get(p, "ref_tol", 2e-2),
                                     X=_get(p, "ref_x", 300.0),
                                     dx=_get(p, "ref_dx", 0.01))

    tasks = [(env, cfg.G, cfg.beta, theta, eps, scheme, ref)
             for eps in epsilons]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            rows = list(pool.map(_sweep_task, tasks))
    else:
        rows = [_sweep_task(t) for t in tasks]
    rows.sort(key=lambda r: -r[0])  # deterministic merge on the sweep key
    result = SweepResult(theta=theta, epsilons=np.array([r[0] for r in rows]),
                         values=np.array([r[1] for r in rows]),
                         reference=float(ref),
                         domain_sensitivity=np.array([r[2] for r in rows]),
                         grad_excursion=any(r[3] for r in rows))
    out = cfg.out_dir / "sweep.csv"
    save_sweep(result, str(out))
    return [out]


def cmd_hill_check(cfg: RunConfig) -> list[Path]:
    p = cfg.params
    mode = _get(p, "mode", "hill", str)
    out = cfg.out_dir / "hill_report.csv"
    if mode == "singular":
        cs = _get(p, "cs", kind=list) if "cs" in p else [_get(p, "c")]
        env = cfg.make_env()
        with open(out, "w", encoding="utf-8") as fh:
            fh.write("c,found,x0\n")
            for c in cs:
                x0 = check_singular_hill(env, c)
                fh.write(f"{float(c)!r},{x0 is not None},"
                         f"{'' if x0 is None else repr(float(x0))}\n")
        return [out]
    if mode != "hill":
        raise ConfigError(f"mode must be 'hill' or 'singular', got {mode!r}")

    hs = _get(p, "hs", kind=list) if "hs" in p else [_get(p, "h")]
    Cs = _get(p, "cs", kind=list) if "cs" in p else [_get(p, "c")]
    doublings = _get(p, "doublings", 0, int)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("h,C,window_half,found,L1,L2,scaled_length,v_min\n")
        for h in hs:
            for C in Cs:
                lo, hi = cfg.window
                witness, used = None, (lo, hi)
                for attempt in range(doublings + 1):
                    env = cfg.make_env(window=used)
                    witness = find_hill(env, h, C)
                    if witness is not None or attempt == doublings:
                        break
                    used = (2.0 * used[0], 2.0 * used[1])
                half = max(abs(used[0]), abs(used[1]))
                if witness is None:
                    fh.write(f"{float(h)!r},{float(C)!r},{half!r},False,,,,\n")
                else:
                    fh.write(
                        f"{float(h)!r},{float(C)!r},{half!r},True,"
                        f"{witness.L1!r},{witness.L2!r},"
                        f"{witness.scaled_length!r},"
                        f"{witness.v_min_on_interval!r}\n")
    return [out]


def cmd_probe(cfg: RunConfig) -> list[Path]:
    p = cfg.params
    source = _get(p, "profile", "corrector", str)
    delta = _get(p, "delta")
    region = _get(p, "region", kind=list)
    if len(region) != 2:
        raise ConfigError(f"region must be two numbers, got {region}")
    dx = _get(p, "dx", 0.01)
    env = cfg.make_env()
    if source == "corrector":
        prof = corrector_profile(env, cfg.G, cfg.beta, _get(p, "lam"),
                                 _get(p, "branch", 2, int),
                                 (region[0], region[1]),
                                 _get(p, "tol", 1e-6), dx)
    elif source == "glued":
        h = _get(p, "hill_h")
        C = _get(p, "hill_c")
        hill = find_hill(env, h, C)
        if hill is None:
            raise HillError(f"no hill witness at (h={h}, C={C}) in the window")
        prof = build_glued_profile(env, cfg.G, cfg.beta, delta, hill,
                                   order=_get(p, "order", "21", str),
                                   region=(region[0], region[1]), dx=dx)
    else:
        raise ConfigError(
            f"profile must be 'corrector' or 'glued', got {source!r}")

    kind = _get(p, "kind", "both", str)
    kinds = ("sub", "super") if kind == "both" else (kind,)
    if any(k not in ("sub", "super") for k in kinds):
        raise ConfigError(f"kind must be sub, super or both, got {kind!r}")
    tol = _get(p, "tol_probe", 0.0) or None
    reports = [residual_probe(env, cfg.G, cfg.beta, prof, delta, k, tol=tol)
               for k in kinds]
    out = cfg.out_dir / "probe.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("kind,min_residual,max_residual,pass\n")
        for rep in reports:
            fh.write(f"{rep.kind},{rep.min_residual!r},{rep.max_residual!r},"
                     f"{rep.passed}\n")
    return [out]


_DISPATCH = {
    "gen-env": cmd_gen_env,
    "corrector": cmd_corrector,
    "theta-curve": cmd_theta_curve,
    "effective": cmd_effective,
    "homogenize": cmd_homogenize,
    "hill-check": cmd_hill_check,
    "probe": cmd_probe,
}


# ------------------------------------------------------------
# entry point
# ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hjlab",
        description="effective Hamiltonians of 1D viscous HJ equations "
                    "in random media")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        q = sub.add_parser(name)
        q.add_argument("--config", required=True, help="INI run config")
        q.add_argument("--out", default=None, help="output directory")
        q.add_argument("--workers", type=int, default=1)
        q.add_argument("--seed-override", type=int, default=None)
    return parser


def _sidecar(cfg: RunConfig, args, outputs: list[Path], wall: float) -> Path:
    meta = {
        "command": cfg.command,
        "config_path": str(Path(args.config).resolve()),
        "config": cfg.echo,
        "flags": {
            "out": str(cfg.out_dir),
            "workers": cfg.workers,
            "seed_override": args.seed_override,
        },
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "hjlab": __version__,
        },
        "wall_time_s": wall,
        "outputs": [o.name for o in outputs],
    }
    path = outputs[0].parent / (outputs[0].stem + ".meta.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code) if exc.code is not None else 0

    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config, args.command, args.out, args.workers,
                          args.seed_override)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        outputs = _DISPATCH[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ScientificError as exc:
        print(f"scientific failure: {exc}", file=sys.stderr)
        return 1
    wall = time.perf_counter() - t0
    sidecar = _sidecar(cfg, args, outputs, wall)
    for path in outputs + [sidecar]:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
