"""Config-driven experiment runner.

Config files are flat ``key = value`` text with dotted section prefixes;
``#`` starts a comment.  Example::

    experiment = tube
    seed = 7
    output = out/tube
    model.name = asian
    tube.x0 = 1, 0
    tube.R = 0.4, 0.2, 0.1
    tube.T = 1
    tube.dt = 1e-3
    tube.paths = 20000

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Sequence

import numpy as np

from . import __version__
from .bounds import BoundConstants, Profiles, tube_lower_bound, tube_upper_bound
from .control_metric import equivalence_report, dc_estimate, rho2_estimate
from .errors import ConfigError, HypotubeError, ValidityError
from .mc import SimConfig, density_fit, rescaled_samples, short_time_escape, tube_probabilities
from .model import BUILTIN_MODELS, Box, get_model, polynomial_model
from .norms import lemma_suite, quasi_distance
from .skeleton import parse_control, r_star, solve_skeleton

log = logging.getLogger("hypotube")

EXPERIMENTS = ("tube", "density", "shorttime-escape", "norms-check", "control-metric", "taylor-scaling")


# ------------------------------------------------------------------ config


def parse_config_text(text: str) -> Dict[str, str]:
    cfg: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in cfg:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        cfg[key] = value
    return cfg


def load_config(path) -> Dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config_text(p.read_text())


class Params:
    """Typed access to a flat config dict; records which keys were read."""

    def __init__(self, raw: Dict[str, str]):
        self.raw = dict(raw)
        self.used = set()

    def _get(self, key, default):
        if key in self.raw:
            self.used.add(key)
            return self.raw[key]
        if default is _REQUIRED:
            raise ConfigError(f"missing config key {key!r}")
        return default

    def str(self, key, default=None):
        v = self._get(key, default if default is not None else _REQUIRED)
        return str(v)

    def float(self, key, default=None):
        v = self._get(key, _REQUIRED if default is None else default)
        try:
            return float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {v!r}") from None

    def int(self, key, default=None):
        v = self._get(key, _REQUIRED if default is None else default)
        try:
            f = float(v)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected an integer, got {v!r}") from None
        if f != int(f):
            raise ConfigError(f"{key}: expected an integer, got {v!r}")
        return int(f)

    def floats(self, key, default=None):
        v = self._get(key, _REQUIRED if default is None else default)
        if not isinstance(v, str):
            return [float(u) for u in v]
        try:
            return [float(u) for u in v.replace(";", ",").split(",") if u.strip()]
        except ValueError:
            raise ConfigError(f"{key}: expected a comma-separated list of numbers, got {v!r}") from None

    def point(self, key, default=None):
        vals = self.floats(key, default)
        if len(vals) != 2:
            raise ConfigError(f"{key}: expected two coordinates")
        return np.array(vals)

    def unused(self) -> List[str]:
        return sorted(set(self.raw) - self.used)


_REQUIRED = object()


def _poly_tables(spec: str):
    """``"i,j:c; i,j:c"`` -> ``{(i, j): c}``."""
    table = {}
    for term in filter(None, (t.strip() for t in spec.split(";"))):
        try:
            exps, coef = term.split(":")
            i, j = (int(e) for e in exps.split(","))
            table[(i, j)] = table.get((i, j), 0.0) + float(coef)
        except ValueError:
            raise ConfigError(f"bad polynomial term {term!r}; expected 'i,j:c'") from None
    return table


def build_model(p: Params):
    name = p.str("model.name", "asian")
    if name == "polynomial":
        tables = {}
        for field in ("sigma", "b"):
            tables[field] = [_poly_tables(p.str(f"model.{field}.{c}", "")) for c in (1, 2)]
        lo = p.floats("model.domain.lo", "-10,-10")
        hi = p.floats("model.domain.hi", "10,10")
        return polynomial_model(tables["sigma"], tables["b"], Box(lo, hi), name="polynomial")
    params = {}
    if name == "asian-drift":
        params["mu0"] = p.float("model.mu0", 0.5)
    return get_model(name, **params)


# ------------------------------------------------------------------ output


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def write_csv(path: Path, header: Sequence[str], rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue(), newline="")
    return path


# ------------------------------------------------------------- experiments


def _sim(p: Params, section: str, T: float, dt_default: float, paths_default: int, seed: int) -> SimConfig:
    return SimConfig(
        dt=p.float(f"{section}.dt", dt_default),
        n_paths=p.int(f"{section}.paths", paths_default),
        seed=seed,
        T=T,
        block_size=p.int("block_size", 1024),
        threads=p.int("threads") if "threads" in p.raw else None,
    )


def exp_tube(p: Params, model, out: Path, seed: int) -> List[Path]:
    T = p.float("tube.T", 1.0)
    x0 = p.point("tube.x0", "1,0")
    Rs = p.floats("tube.R", "0.4,0.2,0.1")
    phi = parse_control(p.str("tube.control", "zero"), T)
    cfg = _sim(p, "tube", T, 1e-3, 10_000, seed)
    res = tube_probabilities(model, x0, phi, Rs, cfg, n_bins=p.int("tube.bins", 20))
    files = [
        write_csv(
            out / "tube.csv",
            ["R", "p_hat", "ci_low", "ci_high", "n_paths", "seed"],
            [(r.R, r.p_hat, r.ci_low, r.ci_high, r.n_paths, r.seed) for r in res],
        ),
        write_csv(
            out / "exit_times.csv",
            ["R", "t_low", "t_high", "count"],
            [(r.R, r.histogram_edges[i], r.histogram_edges[i + 1], int(c)) for r in res for i, c in enumerate(r.exit_time_histogram)],
        ),
    ]
    c = BoundConstants(
        K=p.float("bounds.K", 1.0), q=p.float("bounds.q", 1.0), mu=p.float("bounds.mu", 1.0), h=p.float("bounds.h", 1.0)
    )
    if "bounds.n" in p.raw:
        prof = Profiles.constant(p.float("bounds.n"), p.float("bounds.lambda", 1.0), phi)
    else:
        prof = Profiles.from_skeleton(model, solve_skeleton(model, x0, phi), n_points=p.int("bounds.profile_points", 33))
    rs = r_star(phi, prof.n_at, prof.lam_at, c.mu, c.h, c.K, c.q)
    rows = []
    for r in res:
        lower = tube_lower_bound(c, r.R, prof, T)
        try:
            upper = tube_upper_bound(c, r.R, prof, T, rs)
        except ValidityError:
            upper = None
        rows.append((r.R, lower, upper, r.p_hat, r.ci_low, r.ci_high))
    files.append(write_csv(out / "bounds.csv", ["R", "lower", "upper", "mc_p_hat", "ci_low", "ci_high"], rows))
    return files


def exp_density(p: Params, model, out: Path, seed: int) -> List[Path]:
    delta = p.float("density.delta", 0.01)
    x = p.point("density.x", "1,1")
    cfg = _sim(p, "density", delta, delta / 100, 100_000, seed)
    s = rescaled_samples(model, x, delta, cfg)
    fit = density_fit(s.F[s.alive], p.float("density.radius", 2.0), p.int("density.grid_n", 41))
    files = [
        write_csv(
            out / "density.csv",
            ["z1", "z2", "p_hat", "lower_env", "upper_env", "above_floor"],
            zip(fit.grid[:, 0], fit.grid[:, 1], fit.p_hat, fit.lower_env(), fit.upper_env(), fit.valid),
        )
    ]
    rows = [(1.0, fit.K1, fit.L1, fit.K2, fit.L2, fit.bandwidth[0], fit.bandwidth[1], fit.noise_floor)]
    for scale, d in sorted(fit.sensitivity.items()):
        rows.append((scale, d["K1"], d["L1"], d["K2"], d["L2"], None, None, None))
    files.append(
        write_csv(out / "density_fit.csv", ["bandwidth_scale", "K1", "L1", "K2", "L2", "h1", "h2", "noise_floor"], rows)
    )
    return files


def exp_escape(p: Params, model, out: Path, seed: int) -> List[Path]:
    delta = p.float("escape.delta", 0.01)
    x = p.point("escape.x", "1,1")
    threshold = p.float("escape.threshold", 0.5)
    cfg = _sim(p, "escape", delta, delta / 100, 10_000, seed)
    rows = []
    for R in p.floats("escape.R", "0.1,0.2"):
        e = short_time_escape(model, x, delta, R, threshold, cfg)
        rows.append((R, threshold, e.p_hat, e.ci_low, e.ci_high, e.n_paths, seed))
    return [write_csv(out / "escape.csv", ["R", "threshold", "p_hat", "ci_low", "ci_high", "n_paths", "seed"], rows)]


def exp_norms(p: Params, model, out: Path, seed: int) -> List[Path]:
    res = lemma_suite(model, n_cases=p.int("norms.cases", 10_000), seed=seed, frame_C=p.float("norms.frame_C", 8.0))
    rows = [(model.name, r.name, r.cases, r.violations, r.constant, r.passed) for r in res]
    return [write_csv(out / "norms_check.csv", ["model", "lemma", "cases", "violations", "constant", "passed"], rows)]


def exp_control_metric(p: Params, model, out: Path, seed: int) -> List[Path]:
    x = p.point("dc.x", "1,1")
    files = []
    if "dc.y" in p.raw:
        y = p.point("dc.y")
        d = quasi_distance(model, x, y)
        dc = dc_estimate(model, x, y, N=p.int("dc.N", 16), restarts=p.int("dc.restarts", 6))
        rho = rho2_estimate(model, x, y)
        files.append(
            write_csv(
                out / "dc.csv",
                ["x1", "x2", "y1", "y2", "d", "d_saturated", "d_c_upper", "endpoint_gap", "rho2"],
                [(x[0], x[1], y[0], y[1], d.value, d.saturated, dc.upper_bound, dc.endpoint_gap, rho.value)],
            )
        )
        return files
    n_dir = p.int("dc.directions", 8)
    angles = 2 * np.pi * np.arange(n_dir) / n_dir
    dirs = np.stack([np.cos(angles), np.sin(angles)], -1)
    radii = p.floats("dc.radii", "0.001,0.01,0.1")
    rows = equivalence_report(model, x, dirs, radii, N=p.int("dc.N", 16), restarts=p.int("dc.restarts", 6))
    files.append(
        write_csv(
            out / "equivalence.csv",
            ["direction", "radius", "d", "d_c_upper", "rho2", "d_over_dc", "rho2_over_d"],
            [(r.direction, r.radius, r.d, r.dc_upper, r.rho2, r.ratio, r.rho2 / r.d) for r in rows],
        )
    )
    return files


def exp_taylor(p: Params, model, out: Path, seed: int) -> List[Path]:
    x = p.point("taylor.x", "1,1")
    deltas = p.floats("taylor.deltas", "0.02,0.04,0.08,0.16")
    n = p.int("taylor.paths", 10_000)
    steps = p.int("taylor.steps", 200)
    rows = []
    for d in deltas:
        cfg = SimConfig(dt=d / steps, n_paths=n, seed=seed, T=d, block_size=p.int("block_size", 1024),
                        threads=p.int("threads") if "threads" in p.raw else None)
        s = rescaled_samples(model, x, d, cfg)
        rem = s.remainder[s.alive]
        rows.append((d, float(np.sqrt(np.mean(np.sum(rem**2, axis=-1)))), n))
    slope = float(np.polyfit(np.log([r[0] for r in rows]), np.log([r[1] for r in rows]), 1)[0])
    return [
        write_csv(out / "taylor_scaling.csv", ["delta", "rms_remainder", "n_paths"], rows),
        write_csv(out / "taylor_slope.csv", ["slope"], [(slope,)]),
    ]


RUNNERS: Dict[str, Callable] = {
    "tube": exp_tube,
    "density": exp_density,
    "shorttime-escape": exp_escape,
    "norms-check": exp_norms,
    "control-metric": exp_control_metric,
    "taylor-scaling": exp_taylor,
}


def execute(raw: Dict[str, str], out_default="hypotube_out") -> List[Path]:
    """Run one experiment from a raw config dict and write its manifest."""
    p = Params(raw)
    kind = p.str("experiment")
    if kind not in RUNNERS:
        raise ConfigError(f"unknown experiment {kind!r}; choose from {', '.join(EXPERIMENTS)}")
    seed = p.int("seed", 0)
    out = Path(p.str("output", out_default))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    model = build_model(p)
    t0 = time.perf_counter()
    files = RUNNERS[kind](p, model, out, seed)
    wall = time.perf_counter() - t0
    unused = p.unused()
    if unused:
        log.warning("unused config keys: %s", ", ".join(unused))
    manifest = {
        "config": dict(sorted(raw.items())),
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(wall, 3),
        "outputs": [f.name for f in files],
        "unused_keys": unused,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return files


# --------------------------------------------------------------------- main


def list_models() -> str:
    lines = [f"{'name':<16} {'H3':<4} {'domain':<44} notes"]
    for name in sorted(BUILTIN_MODELS):
        m = get_model(name)
        lines.append(f"{name:<16} {'yes' if m.h3 else 'no':<4} {str(m.domain):<44} {m.notes}")
    return "\n".join(lines)


def _setup_logging(out: Path | None, verbose: bool):
    log.handlers.clear()
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    h = logging.StreamHandler(sys.stderr)
    h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(h)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            fh = logging.FileHandler(out / "run.log", mode="w")
            fh.setFormatter(logging.Formatter("time=%(asctime)s level=%(levelname)s logger=%(name)s msg=%(message)r"))
            log.addHandler(fh)
        except OSError:
            pass


def _parser():
    ap = argparse.ArgumentParser(prog="hypotube", description="Short-time density and tube experiments for planar weak-Hormander diffusions.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run an experiment from a config file")
    r.add_argument("config")

    sub.add_parser("list-models", help="show the built-in models")

    c = sub.add_parser("check-norms", help="randomised matrix-norm inequality suites")
    c.add_argument("model")
    c.add_argument("--cases", type=int, default=10_000)

    t = sub.add_parser("tube", help="tube probabilities and bound table")
    t.add_argument("model")
    t.add_argument("--R", default="0.4,0.2,0.1")
    t.add_argument("--T", type=float, default=1.0)
    t.add_argument("--paths", type=int, default=10_000)
    t.add_argument("--dt", type=float, default=1e-3)
    t.add_argument("--x0", default="1,0")
    t.add_argument("--control", default="zero")

    d = sub.add_parser("density", help="rescaled end-point density and Gaussian envelopes")
    d.add_argument("model")
    d.add_argument("--delta", type=float, default=0.01)
    d.add_argument("--paths", type=int, default=100_000)
    d.add_argument("--x", default="1,1")
    d.add_argument("--dt", type=float, default=None)
    d.add_argument("--radius", type=float, default=2.0)
    d.add_argument("--grid-n", type=int, default=41)

    q = sub.add_parser("dc", help="quasi-distance, control-distance bound and rho_2")
    q.add_argument("model")
    q.add_argument("--x", required=True)
    q.add_argument("--y", required=True)
    q.add_argument("--N", type=int, default=16)
    q.add_argument("--restarts", type=int, default=6)

    for s in (c, t, d, q):
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", default=None)
        s.add_argument("--threads", type=int, default=None)
    return ap


def _raw_from_args(a) -> Dict[str, str]:
    common = {"model.name": a.model, "seed": str(a.seed)}
    if a.threads is not None:
        common["threads"] = str(a.threads)
    if a.cmd == "check-norms":
        raw = {"experiment": "norms-check", "norms.cases": str(a.cases)}
    elif a.cmd == "tube":
        raw = {"experiment": "tube", "tube.R": a.R, "tube.T": repr(a.T), "tube.paths": str(a.paths),
               "tube.dt": repr(a.dt), "tube.x0": a.x0, "tube.control": a.control}
    elif a.cmd == "density":
        raw = {"experiment": "density", "density.delta": repr(a.delta), "density.paths": str(a.paths),
               "density.x": a.x, "density.radius": repr(a.radius), "density.grid_n": str(a.grid_n)}
        if a.dt is not None:
            raw["density.dt"] = repr(a.dt)
    else:
        raw = {"experiment": "control-metric", "dc.x": a.x, "dc.y": a.y, "dc.N": str(a.N), "dc.restarts": str(a.restarts)}
    raw.update(common)
    raw["output"] = a.out or f"hypotube_out/{a.cmd}"
    return raw


def main(argv=None) -> int:
    a = _parser().parse_args(argv)
    if a.cmd == "list-models":
        print(list_models())
        return 0
    try:
        raw = load_config(a.config) if a.cmd == "run" else _raw_from_args(a)
        out = Path(raw.get("output", "hypotube_out"))
        _setup_logging(out, a.verbose)
        files = execute(raw)
    except ConfigError as exc:
        _setup_logging(None, a.verbose) if not log.handlers else None
        log.error("config error: %s", exc)
        return 2
    except HypotubeError as exc:
        log.error("numerical failure (%s): %s", type(exc).__name__, exc)
        return 3
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
