"""Command-line entry point ``ricci-ucp``.

Exit codes: 0 pass, 1 verification failure or vacuous result, 2 invalid input.
Every report starts with the fully resolved configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from datetime import datetime, timezone

import numpy as np

from . import constants as cst
from . import forms_lab, lattice, skeleton, stochastic
from .errors import ConvergenceError, VerificationError

SCHEMA = "ricci-ucp/1"
TWO_PI = 2.0 * math.pi


class UsageError(Exception):
    pass


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(",", " ").split()]


def _json_value(text):
    return json.loads(text) if isinstance(text, str) else text


def _num(text):
    return float(text)


def _int(text):
    return int(text)


def _str(text):
    return str(text)


def _opt_float(text):
    return None if text is None or text == "none" else float(text)


# name, parser, default, help
COMMON = [
    ("seed", _int, 12345, "base seed for Monte Carlo"),
    ("threads", _int, None, "worker threads (default: $RICCI_UCP_THREADS or 1)"),
]

OPTIONS = {
    "constants": [
        ("K", _num, 0.0, "signed Ricci lower bound"),
        ("n", _int, 3, "dimension"),
        ("R", _num, 1.0, "relative-density radius"),
        ("rho", _num, 0.5, "inner radius"),
        ("a", _num, 0.0, "relative bound of the negative potential part"),
        ("b", _num, 0.0, "additive constant of the relative bound"),
        ("epsilon", _num, 0.25, "epsilon in (0, 1/2)"),
        ("diameter", _num, math.inf, "diameter of M"),
        ("D", _opt_float, None, "doubling constant override"),
        ("sturm_C", _opt_float, None, "heat-kernel constant override"),
        ("lambda_numeric", _opt_float, None, "numeric Dirichlet bottom for the sharper kappa"),
    ],
    "ucp-verify": [
        ("d", _int, 3, "torus dimension"),
        ("N_side", _int, 16, "grid points per side"),
        ("side", _num, TWO_PI, "torus side length"),
        ("S", _str, "ball-array", "ball-array | all | mask-file"),
        ("spacing", _int, 4, "ball-array spacing in cells"),
        ("ball_radius", _num, 1.5, "ball radius in cells"),
        ("mask_file", _str, None, "JSON vertex list, or a skeleton report"),
        ("K", _num, 0.0, "signed Ricci lower bound"),
        ("R", _num, 1.8, "relative-density radius"),
        ("rho", _num, 0.4, "inner radius"),
        ("a", _num, 0.0, "a"),
        ("b", _num, 0.0, "b"),
        ("epsilon", _num, 0.25, "epsilon"),
        ("kappa", _opt_float, None, "claimed kappa (default: pipeline value)"),
        ("E0", _opt_float, None, "upper end of I (default: pipeline value)"),
    ],
    "exit-time": [
        ("geometry", _str, "line", "line | torus | radial | lattice"),
        ("sides", _floats, None, "torus sides"),
        ("d", _int, 1, "lattice dimension"),
        ("N_side", _int, 64, "lattice points per side"),
        ("side", _num, TWO_PI, "lattice side"),
        ("K", _num, 0.0, "signed curvature bound (radial model or bound)"),
        ("n", _int, 3, "dimension entering the bound constants"),
        ("rho", _num, 1.0, "exit radius"),
        ("R", _num, 1.0, "R of the exit-time bound"),
        ("alphas", _floats, None, "alpha grid (default: 8 geometric points up to the admissible maximum)"),
        ("fit_alphas", _floats, None, "alpha grid for the decay fit"),
        ("paths", _int, 100_000, "number of paths"),
        ("steps_per_alpha", _int, 200, "time steps per horizon"),
    ],
    "hit-and-run": [
        ("d", _int, 1, "torus dimension"),
        ("side", _num, TWO_PI, "torus side"),
        ("balls", _json_value, [[math.pi, 0.3]], "JSON list of [center..., radius]"),
        ("rho", _num, 0.6, "tube radius"),
        ("alpha0", _num, 0.2, "horizon"),
        ("alpha", _num, 0.05, "occupation threshold"),
        ("x", _floats, None, "start point (default: origin)"),
        ("paths", _int, 100_000, "number of paths"),
        ("dt", _opt_float, None, "time step (default alpha/200)"),
    ],
    "semigroup-diff": [
        ("d", _int, 1, "torus dimension"),
        ("N_side", _int, 200, "grid points per side"),
        ("side", _num, TWO_PI, "torus side"),
        ("arc_radius", _num, 10.0, "radius of S in cells"),
        ("rho", _num, 4.0, "tube radius in cells"),
        ("beta", _num, 10.0, "coupling"),
        ("alpha0", _opt_float, None, "time (default 4 h^2)"),
        ("alpha", _opt_float, None, "alpha (default alpha0/2)"),
        ("paths", _int, 100_000, "number of paths"),
    ],
    "lifting": [
        ("instances", _int, 500, "number of random instances"),
        ("dim_min", _int, 2, "smallest dimension"),
        ("dim_max", _int, 30, "largest dimension"),
        ("samples", _int, 100, "samples per instance"),
    ],
    "skeleton": [
        ("d", _int, 3, "torus dimension"),
        ("N_side", _int, 16, "grid points per side"),
        ("side", _num, TWO_PI, "torus side"),
        ("S", _str, "ball-array", "ball-array | all | mask-file"),
        ("spacing", _int, 4, "ball-array spacing in cells"),
        ("ball_radius", _num, 1.5, "ball radius in cells"),
        ("mask_file", _str, None, "JSON vertex list"),
        ("R", _num, 1.8, "relative-density radius"),
        ("rho", _num, 0.4, "inner radius"),
    ],
    "spectrum": [
        ("geometry", _str, "torus", "torus | radial"),
        ("d", _int, 1, "torus dimension"),
        ("N_side", _int, 4, "grid points per side"),
        ("side", _num, 4.0, "torus side"),
        ("K", _num, 0.0, "radial model curvature"),
        ("n", _int, 3, "radial model dimension"),
        ("rho", _num, 0.5, "radial inner radius"),
        ("R", _num, 3.0, "radial outer radius"),
        ("N", _int, 256, "radial cells"),
        ("k", _int, 4, "number of eigenpairs"),
        ("method", _str, "auto", "auto | dense | sparse"),
    ],
}


# serialization --------------------------------------------------------------

def clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _csv_text(header: dict, rows: list) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(clean(header)) + "\n")
    if rows:
        cols = list(rows[0].keys())
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in cols])
    return buf.getvalue()


def _cell(v):
    v = clean(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, dict)):
        return json.dumps(v)
    return v


# geometry helpers -------------------------------------------------------------

def _ball_array(space: skeleton.MetricPointSet, N_side: int, spacing: int, radius_cells: float):
    if spacing < 1 or N_side % spacing:
        raise UsageError("spacing must divide N_side")
    multi = np.array(np.unravel_index(np.arange(space.size), space.grid_shape)).T
    centers = np.flatnonzero(np.all(multi % spacing == 0, axis=1))
    return skeleton.ball_union(centers, radius_cells * space.spacing, space), centers


def _load_mask(path: str, size: int) -> np.ndarray:
    with open(path) as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = data.get("result", data).get("S_indices")
        if data is None:
            raise UsageError("mask file has no S_indices")
    arr = np.asarray(data)
    mask = np.zeros(size, dtype=bool)
    if arr.dtype == bool and arr.size == size:
        return arr
    mask[arr.astype(np.int64)] = True
    return mask


def _S_mask(cfg, space):
    kind = cfg["S"]
    if kind == "all":
        return np.ones(space.size, dtype=bool)
    if kind == "ball-array":
        return _ball_array(space, cfg["N_side"], cfg["spacing"], cfg["ball_radius"])[0]
    if kind == "mask-file":
        if not cfg.get("mask_file"):
            raise UsageError("S=mask-file needs --mask-file")
        return _load_mask(cfg["mask_file"], space.size)
    raise UsageError(f"unknown S kind {kind!r}")


# subcommands ------------------------------------------------------------------

def cmd_constants(cfg):
    params = cst.ProblemParams(K=cfg["K"], n=cfg["n"], R=cfg["R"], rho=cfg["rho"], a=cfg["a"], b=cfg["b"],
                               epsilon=cfg["epsilon"], diameter=cfg["diameter"], D=cfg["D"], sturm_C=cfg["sturm_C"])
    rep = cst.compute_kappa(params, cfg["lambda_numeric"])
    result = rep.to_dict()
    result["nontrivial"] = cst.check_nontrivial(rep, params)
    result["vacuous"] = rep.vacuous
    rows = [{"name": k, "value": v} for k, v in result.items() if not isinstance(v, (dict, list))]
    return ("vacuous" if rep.vacuous else "pass"), result, rows


def cmd_ucp_verify(cfg):
    space = skeleton.MetricPointSet.torus_grid(cfg["d"], cfg["N_side"], cfg["side"])
    S = _S_mask(cfg, space)
    sk = skeleton.build_skeleton(S, cfg["R"], cfg["rho"], space)
    params = cst.ProblemParams(K=cfg["K"], n=max(3, cfg["d"]), R=cfg["R"], rho=cfg["rho"], a=cfg["a"], b=cfg["b"],
                               epsilon=cfg["epsilon"], diameter=space.diameter)
    rep = cst.compute_kappa(params)
    kappa = rep.kappa if cfg["kappa"] is None else cfg["kappa"]
    E0 = rep.E0 if cfg["E0"] is None else cfg["E0"]
    op = lattice.build_torus_laplacian(cfg["d"], cfg["N_side"], cfg["side"])
    ver = lattice.verify_ucp(op, S, (-math.inf, E0), kappa)
    result = {
        "verification": ver,
        "pipeline": {"kappa": rep.kappa, "E0": rep.E0, "flags": rep.flags},
        "S_volume_fraction": float(S.mean()),
        "skeleton_centers": sk.centers,
        "illustrative": cfg["d"] < 3,
    }
    status = "pass" if ver["passed"] and ver["status"] == "checked" else ("vacuous" if ver["passed"] else "fail")
    rows = [{"claimed_kappa": ver["claimed_kappa"], "observed_kappa": ver["observed_kappa"], "slack": ver["slack"],
             "rank": ver["rank"], "passed": ver["passed"]}]
    return status, result, rows


def _walk_geometry(cfg):
    g = cfg["geometry"]
    if g == "line":
        return {"kind": "torus", "sides": [math.inf]}, "euler-maruyama"
    if g == "torus":
        if not cfg.get("sides"):
            raise UsageError("torus geometry needs --sides")
        return {"kind": "torus", "sides": cfg["sides"]}, "euler-maruyama"
    if g == "radial":
        return {"kind": "radial", "K": cfg["K"], "n": cfg["n"]}, "euler-maruyama"
    if g == "lattice":
        return {"kind": "lattice", "d": cfg["d"], "N_side": cfg["N_side"], "side": cfg["side"]}, "grid-jump"
    raise UsageError(f"unknown geometry {g!r}")


def cmd_exit_time(cfg):
    geom, scheme = _walk_geometry(cfg)
    # only n, K and the constant defaults of the problem enter the bound
    params = cst.ProblemParams(K=cfg["K"], n=cfg["n"], R=cfg["R"], rho=cfg["R"] / 2.0)
    alphas = cfg["alphas"]
    if alphas is None:
        amax = cst.exit_alpha_max(params, cfg["rho"], cfg["R"])
        alphas = list(np.geomspace(min(1e-7, amax / 10), amax, 8))
    walk = stochastic.WalkConfig(geom, dt=min(alphas) / cfg["steps_per_alpha"], num_paths=cfg["paths"],
                                 seed=cfg["seed"], scheme=scheme, threads=cfg["threads"])
    x = 0 if geom["kind"] in ("radial", "lattice") else np.zeros(len(geom["sides"]))
    rep = stochastic.exit_bound_check(params, walk, cfg["rho"], cfg["R"], alphas, x=x, fit_grid=cfg["fit_alphas"],
                                      steps_per_alpha=cfg["steps_per_alpha"])
    rows = [{"alpha": r["alpha"], "p_hat": r.get("p_hat"), "ci": r.get("ci"), "bound": r.get("bound"),
             "pass": r.get("passed")} for r in rep["rows"]]
    return ("pass" if rep["passed"] else "fail"), rep, rows


def cmd_hit_and_run(cfg):
    d = cfg["d"]
    balls = np.asarray(cfg["balls"], dtype=float).reshape(-1, d + 1)
    S = stochastic.BallUnion(balls[:, :d], balls[:, d])
    x = np.zeros(d) if cfg["x"] is None else np.asarray(cfg["x"], dtype=float)
    if not 0 < cfg["alpha"] < cfg["alpha0"]:
        raise cst.PreconditionError("need 0 < alpha < alpha0")
    dt = cfg["dt"] or cfg["alpha"] / 200.0
    walk = stochastic.WalkConfig({"kind": "torus", "sides": [cfg["side"]] * d}, dt=dt, num_paths=cfg["paths"],
                                 seed=cfg["seed"], threads=cfg["threads"])
    rep = stochastic.hit_and_run_pair(walk, S, cfg["rho"], cfg["alpha0"], cfg["alpha"], x)
    result = {"lhs": rep["lhs"].to_dict(), "rhs": rep["rhs"].to_dict(), "passed": rep["passed"]}
    rows = [{"side": k, "p_hat": result[k]["p_hat"], "ci": result[k]["ci_halfwidth"]} for k in ("lhs", "rhs")]
    return ("pass" if rep["passed"] else "fail"), result, rows


def semigroup_case(d, N_side, side, arc_radius, rho_cells, beta, alpha0, alpha, paths, seed, threads=None):
    """Both sides of the squared semigroup-difference inequality on a periodic grid.

    The compared operators are ``A/2 + beta 1_{S_rho}`` and the Dirichlet
    restriction off S of ``A/2 + beta 1_{S_rho \\ S}`` at time ``alpha0``.
    """
    space = skeleton.MetricPointSet.torus_grid(d, N_side, side)
    h = space.spacing
    S = skeleton.ball_union([0], arc_radius * h, space)
    Sr = skeleton.tubular_neighbourhood(S, rho_cells * h, space) | S
    op = lattice.build_torus_laplacian(d, N_side, side)
    half = lattice.DiscreteOperator(op.stiffness * 0.5, op.measure, op.mesh_h, op.geometry, op.boundary,
                                    op.vertex_ids)
    full = lattice.add_potential(half, beta * Sr)
    dirp = lattice.add_potential(lattice.dirichlet_restrict(half, S), beta * Sr[~S])
    norm = lattice.semigroup_difference_norm(full, dirp, alpha0)
    r_exit = rho_cells * h / 2.0
    walk = stochastic.WalkConfig({"kind": "lattice", "d": d, "N_side": N_side, "side": side},
                                 dt=(alpha / 2.0) / 200.0, num_paths=paths, seed=seed, scheme="grid-jump",
                                 threads=threads)
    est = stochastic.simulate_exit_prob(walk, 0, r_exit, alpha / 2.0)
    exact = lattice_exit_probability(op, space, r_exit, alpha / 2.0)
    rhs = math.exp(-2.0 * beta * alpha) + est.p_hat + 3.0 * est.ci_halfwidth
    return {
        "beta": beta, "alpha0": alpha0, "alpha": alpha, "norm": norm, "norm_squared": norm * norm,
        "exp_term": math.exp(-2.0 * beta * alpha), "exit_estimate": est.to_dict(), "exit_exact": exact,
        "rhs": rhs, "passed": bool(norm * norm <= rhs), "passed_unsquared": bool(norm <= rhs),
    }


def lattice_exit_probability(op, space, radius, t):
    """``P_0(tau_radius <= t)`` for the lattice walk, from the chain killed outside the ball."""
    from scipy.linalg import expm

    inside = space.dist_block([0])[0] < radius * (1 - 1e-12)
    sub = lattice.dirichlet_restrict(op, ~inside)
    surv = expm(-t * sub.symmetric_matrix().toarray()) @ np.ones(sub.size)
    pos = int(np.flatnonzero(sub.vertex_ids == 0)[0])
    return float(1.0 - surv[pos])


def cmd_semigroup_diff(cfg):
    h = cfg["side"] / cfg["N_side"]
    alpha0 = cfg["alpha0"] or 4.0 * h * h
    alpha = cfg["alpha"] or alpha0 / 2.0
    if not 0 < alpha < alpha0:
        raise cst.PreconditionError("need 0 < alpha < alpha0")
    rep = semigroup_case(cfg["d"], cfg["N_side"], cfg["side"], cfg["arc_radius"], cfg["rho"], cfg["beta"], alpha0,
                         alpha, cfg["paths"], cfg["seed"], cfg["threads"])
    rows = [{k: rep[k] for k in ("beta", "alpha0", "alpha", "norm", "norm_squared", "rhs", "passed")}]
    return ("pass" if rep["passed"] else "fail"), rep, rows


def cmd_lifting(cfg):
    rep = forms_lab.lifting_suite(cfg["instances"], (cfg["dim_min"], cfg["dim_max"]), cfg["samples"], cfg["seed"])
    rows = [{k: r.get(k) for k in ("instance", "dim", "E0", "beta", "threshold", "cone_min", "max_violation",
                                    "vacuous", "passed")} for r in rep["results"]]
    summary = {k: v for k, v in rep.items() if k != "results"}
    return ("pass" if rep["passed"] else "fail"), summary, rows


def cmd_skeleton(cfg):
    space = skeleton.MetricPointSet.torus_grid(cfg["d"], cfg["N_side"], cfg["side"])
    S = _S_mask(cfg, space)
    sk = skeleton.build_skeleton(S, cfg["R"], cfg["rho"], space)
    vor = skeleton.voronoi_partition(sk, space)
    cells = {int(p): int(np.sum(vor.assignment == p)) for p in vor.centers}
    result = {"skeleton": sk.to_dict(), "voronoi": {"checks": vor.checks, "cell_sizes": cells},
              "S_indices": np.flatnonzero(S), "metric": space.metric_tag}
    ok = all(v["passed"] if isinstance(v, dict) else v is not False for k, v in sk.checks.items()
             if k not in ("single_center_compact", "proper")) and all(vor.checks.values())
    rows = [{"center": int(p), "coords": space.coords[p], "cell_size": cells[int(p)]} for p in sk.centers]
    return ("pass" if ok else "fail"), result, rows


def cmd_spectrum(cfg):
    if cfg["geometry"] == "torus":
        op = lattice.build_torus_laplacian(cfg["d"], cfg["N_side"], cfg["side"])
    elif cfg["geometry"] == "radial":
        from .model_geometry import CurvatureParams

        op = lattice.build_radial_operator(CurvatureParams(cfg["K"], cfg["n"]), cfg["rho"], cfg["R"], cfg["N"])
    else:
        raise UsageError(f"unknown geometry {cfg['geometry']!r}")
    dec = lattice.lowest_eigenpairs(op, cfg["k"], method=cfg["method"])
    rows = dec.summary_rows()
    return "pass", {"eigenvalues": dec.eigenvalues, "residuals": dec.residuals, "mesh_h": op.mesh_h}, rows


COMMANDS = {
    "constants": cmd_constants,
    "ucp-verify": cmd_ucp_verify,
    "exit-time": cmd_exit_time,
    "hit-and-run": cmd_hit_and_run,
    "semigroup-diff": cmd_semigroup_diff,
    "lifting": cmd_lifting,
    "skeleton": cmd_skeleton,
    "spectrum": cmd_spectrum,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ricci-ucp", description="Constants and numerical checks for the "
                                "uncertainty principle under Ricci lower bounds.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON file with option values")
        sp.add_argument("--output", help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--no-timestamp", action="store_true", help="omit the timestamp for byte-stable output")
        for opt, _, default, help_ in COMMON + OPTIONS[name]:
            sp.add_argument("--" + opt.replace("_", "-"), dest=opt, default=None, help=f"{help_} (default {default!r})")
    return p


def resolve(name: str, args) -> dict:
    """Defaults, then the --config file, then explicit flags."""
    table = COMMON + OPTIONS[name]
    cfg = {opt: default for opt, _, default, _ in table}
    parsers = {opt: fn for opt, fn, _, _ in table}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        unknown = set(data) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        for k, v in data.items():
            cfg[k] = v if v is None else parsers[k](v)
    for opt in cfg:
        v = getattr(args, opt, None)
        if v is not None:
            cfg[opt] = parsers[opt](v)
    return cfg


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve(args.command, args)
        status, result, rows = COMMANDS[args.command](cfg)
    except (UsageError, ValueError, json.JSONDecodeError, OSError) as exc:
        print(f"ricci-ucp: error: {exc}", file=sys.stderr)
        return 2
    except (VerificationError, ConvergenceError) as exc:
        status, result, rows = "fail", {"error": str(exc), "witness": getattr(exc, "witness", None)}, []
        cfg = resolve(args.command, args)
    header = {"schema": SCHEMA, "subcommand": args.command, "config": cfg, "status": status}
    if not args.no_timestamp:
        header["timestamp"] = datetime.now(timezone.utc).isoformat()
    if args.format == "json":
        text = json.dumps(clean({"header": header, "result": result}), indent=2) + "\n"
    else:
        text = _csv_text(header, rows)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0 if status == "pass" else 1


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
