"""Experiment runner: ``hdg-elasticity run ...`` and ``hdg-elasticity compare ...``.

Each (scheme, level, lambda) run is independent; runs go through a thread
pool whose size comes from ``HDG_ELAST_THREADS`` (default 1) and rows are
sorted before writing, so the CSV does not depend on completion order.
"""

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .analysis import PLATEAU_SLOPE, GRADIENT_ROBUST_SLOPE, compute_errors, fitted_slope
from .assembly import SCHEMES, ConfigError, SchemeConfig, normalize_flavor
from .mesh import build_mesh
from .problems import PROBLEMS, ExpressionError, get_problem
from .schemes import solve_scheme

CSV_VERSION = 1
COLUMNS = ["scheme", "k", "mesh", "level", "h", "lambda", "ndof_total", "ndof_condensable",
           "ndof_coupled", "l2_err", "h1semi_err", "div_err", "energy_err", "sol_norm_1h",
           "grad_norm", "eoc_l2", "eoc_h1", "residual", "solve_seconds"]
COUNT_COLUMNS = {"k", "level", "ndof_total", "ndof_condensable", "ndof_coupled"}
KEY_COLUMNS = {"scheme", "mesh"}
DIAGNOSTIC_COLUMNS = {"residual", "solve_seconds"}  # not compared against goldens
ERROR_RTOL = 1e-6
THREADS_ENV = "HDG_ELAST_THREADS"
CONVERGENCE_LAMBDAS = (1.0, 1e2, 1e5)
ROBUSTNESS_LAMBDAS = (1e2, 1e4, 1e6, 1e8)


class SchemaMismatch(ValueError):
    pass


@dataclass
class ExperimentConfig:
    example: str = "ex1"
    schemes: tuple = ("S1",)
    k: int = 2
    levels: tuple = (0, 1, 2)
    lambdas: tuple = CONVERGENCE_LAMBDAS
    mu: float = 1.0
    alpha0: float = None
    mesh: str = "auto"
    out: str = None
    json: bool = False
    golden: str = None
    theta: str = None
    alpha_th: float = 1e-3
    timings: bool = False
    schur: bool = False

    def flavor_for(self, scheme):
        if self.mesh != "auto":
            return normalize_flavor(self.mesh)
        return "uniform" if scheme in ("M1", "M2") else "barycentric"

    def scheme_configs(self):
        """Validated SchemeConfig per (scheme, lambda); raises ConfigError early."""
        if self.example not in PROBLEMS:
            raise ConfigError(f"unknown example {self.example!r}; choose from {PROBLEMS}")
        out = {}
        for s in self.schemes:
            for lam in self.lambdas:
                out[s, lam] = SchemeConfig(s, self.k, mu=self.mu, lam=lam, alpha0=self.alpha0,
                                           mesh_flavor=self.flavor_for(s)).validate()
        if self.schur and set(self.schemes) != {"M2"}:
            raise ConfigError("--schur applies to M2 only")
        return out


# ------------------------------------------------------------------ runs

def _run_one(problem, config, level, schur):
    mesh = build_mesh(level, config.mesh_flavor)
    sol = solve_scheme(mesh, config, problem.forcing, problem.bc, schur=schur)
    rep = compute_errors(sol, problem.exact)
    return {
        "scheme": config.scheme, "k": config.k, "mesh": normalize_flavor(config.mesh_flavor),
        "level": level, "h": mesh.h, "lambda": config.lam,
        "ndof_total": sol.ndof["total"], "ndof_condensable": sol.ndof["condensable"],
        "ndof_coupled": sol.ndof["coupled"], **rep.as_dict(),
        "residual": sol.stats["residual"], "solve_seconds": sol.stats["solve_seconds"],
    }


def _with_eocs(rows):
    for r in rows:
        r["eoc_l2"] = r["eoc_h1"] = float("nan")
    groups = {}
    for r in rows:
        groups.setdefault((r["scheme"], r["lambda"]), []).append(r)
    for g in groups.values():
        g.sort(key=lambda r: r["level"])
        for prev, cur in zip(g, g[1:]):
            for col, err in (("eoc_l2", "l2_err"), ("eoc_h1", "h1semi_err")):
                a, b = prev[err], cur[err]
                if a > 0 and b > 0 and math.isfinite(a) and math.isfinite(b):
                    cur[col] = math.log2(a / b)
    return rows


def run_experiment(cfg: ExperimentConfig):
    """All rows of an experiment, sorted by (scheme order, level, lambda)."""
    configs = cfg.scheme_configs()
    problem = get_problem(cfg.example, theta=cfg.theta, alpha_th=cfg.alpha_th)
    jobs = [(s, lvl, lam) for s in cfg.schemes for lvl in cfg.levels for lam in cfg.lambdas]

    def work(job):
        s, lvl, lam = job
        try:
            return _run_one(problem, configs[s, lam], lvl, cfg.schur)
        except Exception as exc:
            raise RuntimeError(f"{s} level={lvl} lambda={lam:g}: {type(exc).__name__}: {exc}") from exc

    threads = max(1, int(os.environ.get(THREADS_ENV, "1")))
    if threads == 1:
        rows = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(work, jobs))
    order = {s: i for i, s in enumerate(cfg.schemes)}
    rows.sort(key=lambda r: (order[r["scheme"]], r["level"], r["lambda"]))
    return _with_eocs(rows)


# ---------------------------------------------------------------- output

def format_value(v, timings=True, column=None):
    if column == "solve_seconds" and not timings:
        return "NA"
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if not math.isfinite(v):
        return "NA"
    return f"{v:.6g}"


def rows_to_csv(rows, timings=False):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([format_value(r[c], timings, c) for c in COLUMNS])
    return buf.getvalue()


def rows_to_json(rows, timings=False):
    table = [{c: format_value(r[c], timings, c) for c in COLUMNS} for r in rows]
    return json.dumps({"schema_version": CSV_VERSION, "columns": COLUMNS, "rows": table},
                      indent=1) + "\n"


def robustness_summary(rows, example, mu=1.0):
    """Slope of log(norm) vs log(lambda) per (scheme, level), gradient loads only."""
    lines = []
    if example not in ("ex2", "thermo"):
        return lines
    groups = {}
    for r in rows:
        groups.setdefault((r["scheme"], r["level"]), []).append(r)
    for (s, lvl), g in groups.items():
        if len(g) < 2:
            continue
        lams = [r["lambda"] for r in g]
        norms = [r["grad_norm"] for r in g]
        if example == "thermo":  # the load itself grows like 2 mu + 3 lam
            norms = [n / (2 * mu + 3 * lam) for n, lam in zip(norms, lams)]
        try:
            slope = fitted_slope(lams, norms)
        except ValueError:
            continue
        tag = ("gradient-robust" if slope <= GRADIENT_ROBUST_SLOPE
               else "plateaued" if slope >= PLATEAU_SLOPE else "intermediate")
        what = "grad_norm/(2mu+3lam)" if example == "thermo" else "grad_norm"
        lines.append(f"{s} L{lvl}: slope of log {what} vs log lambda = {slope:+.3f} ({tag})")
    return lines


def eoc_summary(rows):
    lines = []
    for r in rows:
        if math.isfinite(r["eoc_l2"]):
            lines.append(f"{r['scheme']} L{r['level']} lambda={r['lambda']:g}: "
                         f"eoc_l2={r['eoc_l2']:.2f} eoc_h1={r['eoc_h1']:.2f}")
    return lines


# ---------------------------------------------------------------- golden

def _read_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaMismatch("empty CSV")
    return rows[0], rows[1:]


def compare_golden(csv_text, golden_text, rtol=ERROR_RTOL):
    """Cell-wise diff; counts and keys must match exactly, floats to ``rtol``.

    Returns a list of mismatch descriptions (empty on success).
    """
    h1, r1 = _read_csv(csv_text)
    h2, r2 = _read_csv(golden_text)
    if h1 != h2:
        raise SchemaMismatch(f"headers differ: {h1} vs {h2}")
    if len(r1) != len(r2):
        raise SchemaMismatch(f"row counts differ: {len(r1)} vs {len(r2)}")
    diffs = []
    for i, (a, b) in enumerate(zip(r1, r2)):
        for col, x, y in zip(h1, a, b):
            if col in DIAGNOSTIC_COLUMNS or x == y:
                continue
            if col in COUNT_COLUMNS or col in KEY_COLUMNS or "NA" in (x, y):
                diffs.append(f"row {i} {col}: {x} != {y}")
                continue
            fx, fy = float(x), float(y)
            if abs(fx - fy) > rtol * max(abs(fx), abs(fy)):
                diffs.append(f"row {i} {col}: {x} vs {y} (rel {abs(fx - fy) / max(abs(fx), abs(fy)):.2e})")
    return diffs


# ------------------------------------------------------------------- CLI

def _levels(text):
    if ".." in text:
        a, b = text.split("..")
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(t) for t in text.split(","))


def _schemes(text):
    out = tuple(s.strip().upper() for s in text.split(",") if s.strip())
    bad = [s for s in out if s not in SCHEMES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown scheme(s) {bad}; choose from {SCHEMES}")
    return out


def _floats(text):
    return tuple(float(t) for t in text.split(","))


def build_parser():
    p = argparse.ArgumentParser(prog="hdg-elasticity",
                                description="Locking and gradient-robustness experiments for 2D elasticity.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment and write a CSV table")
    r.add_argument("--example", default="ex1", choices=PROBLEMS)
    r.add_argument("--scheme", type=_schemes, default=("S1",), help="comma list of M1,M2,SV,S1,S2,S3")
    r.add_argument("--k", type=int, default=2)
    r.add_argument("--levels", type=_levels, default=(0, 1, 2), help="a..b or comma list")
    r.add_argument("--lambda", dest="lambdas", type=_floats, default=None,
                   help="comma list; default 1,1e2,1e5 (ex1) or 1e2,1e4,1e6,1e8 (ex2, thermo)")
    r.add_argument("--mu", type=float, default=1.0)
    r.add_argument("--alpha0", type=float, default=None,
                   help="HDG penalty; default 10 on uniform and 20 on barycentric meshes")
    r.add_argument("--mesh", default="auto", choices=["auto", "uniform", "bary", "barycentric"],
                   help="auto: uniform for M1/M2, barycentric otherwise")
    r.add_argument("--out", help="CSV path (stdout if omitted)")
    r.add_argument("--json", action="store_true", help="also write a JSON mirror next to --out")
    r.add_argument("--golden", help="compare the CSV against this file; exit 1 on mismatch")
    r.add_argument("--theta", help='temperature field for --example thermo, e.g. "sin(3x)*cos(2y)"')
    r.add_argument("--alpha-th", type=float, default=1e-3)
    r.add_argument("--timings", action="store_true", help="record solve_seconds (breaks byte-identity)")
    r.add_argument("--schur", action="store_true", help="M2 via the pressure-eliminated system")
    c = sub.add_parser("compare", help="compare a CSV against a golden file")
    c.add_argument("csv")
    c.add_argument("golden")
    c.add_argument("--rtol", type=float, default=ERROR_RTOL)
    return p


def config_from_args(a) -> ExperimentConfig:
    lambdas = a.lambdas
    if lambdas is None:
        lambdas = ROBUSTNESS_LAMBDAS if a.example in ("ex2", "thermo") else CONVERGENCE_LAMBDAS
    return ExperimentConfig(example=a.example, schemes=a.scheme, k=a.k, levels=a.levels,
                            lambdas=lambdas, mu=a.mu, alpha0=a.alpha0, mesh=a.mesh, out=a.out,
                            json=a.json, golden=a.golden, theta=a.theta, alpha_th=a.alpha_th,
                            timings=a.timings, schur=a.schur)


def _cmd_run(a, stdout, stderr):
    cfg = config_from_args(a)
    rows = run_experiment(cfg)
    text = rows_to_csv(rows, cfg.timings)
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            fh.write(text)
        if cfg.json:
            with open(os.path.splitext(cfg.out)[0] + ".json", "w") as fh:
                fh.write(rows_to_json(rows, cfg.timings))
    else:
        stdout.write(text)
    report = stderr if not cfg.out else stdout
    for line in eoc_summary(rows) + robustness_summary(rows, cfg.example, cfg.mu):
        print(line, file=report)
    if cfg.golden:
        with open(cfg.golden) as fh:
            diffs = compare_golden(text, fh.read())
        for d in diffs:
            print("golden mismatch:", d, file=stderr)
        if diffs:
            return 1
        print("golden comparison passed", file=report)
    return 0


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, stdout, stderr)
        with open(args.csv) as f1, open(args.golden) as f2:
            diffs = compare_golden(f1.read(), f2.read(), args.rtol)
        for d in diffs:
            print(d, file=stdout)
        print("PASS" if not diffs else f"FAIL ({len(diffs)} cells)", file=stdout)
        return 0 if not diffs else 1
    except (ConfigError, ExpressionError, SchemaMismatch, OSError) as exc:
        print(f"error: {exc}", file=stderr)
        return 2
    except RuntimeError as exc:
        print(f"run failed: {exc}", file=stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
