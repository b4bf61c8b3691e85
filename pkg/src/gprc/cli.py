"""Command-line front end: ``gprc {simulate,infer,predict,report}``.

Settings resolve in three layers: built-in problem defaults, then an
optional JSON file (``--config``), then explicit flags. The resolved
settings are echoed into every output directory so a run can be repeated
from them alone.
"""

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io
from .errors import (
    ArgumentError, GprcError, IllConditionedError, SolverBlowupError, TrainingError,
)
from .gp import NoiseConfig, OptimizerConfig
from .inference import build_posterior, chain_stats, run_chain
from .linearization import PicardConfig, default_eval_grid, initial_guess, picard_solve
from .operators import label, linear_equation
from .problems import builtin, lattice, reference, simulate

log = logging.getLogger("gprc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

# flag name -> ProblemConfig field
_FLAG_FIELDS = {
    "noise_var": "noise_var",
    "sigma_r2": "sigma_r2",
    "alpha": "alpha",
    "n_samples": "n_samples",
    "proposal_sd": "proposal_sd",
    "chi_m": "chi_m",
    "chi_width": "chi_width",
    "max_picard": "max_picard",
    "init": "init",
    "train_noise": "train_noise",
}
_RUN_KEYS = ("problem", "method", "refit_every", "operator", "optimizer", "chains", "burn_in", "data")


# -- settings ---------------------------------------------------------------------


def _load_json(path):
    try:
        with open(path) as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise ArgumentError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ArgumentError(f"{path}: config must be a JSON object")
    return raw


def resolve_settings(args):
    """Merged settings dict (plain JSON types) from defaults, file and flags."""
    raw = _load_json(args.config) if getattr(args, "config", None) else {}
    settings = {"problem": "oscillator", "method": "gprc", "refit_every": 1, "chains": 1,
                "burn_in": None, "optimizer": {}, "operator": None, "data": None}
    problem_over = {k: v for k, v in raw.items() if k not in _RUN_KEYS}
    settings.update({k: raw[k] for k in _RUN_KEYS if k in raw})
    for flag in ("problem", "method", "refit_every", "chains", "burn_in", "data"):
        v = getattr(args, flag, None)
        if v is not None:
            settings[flag] = v
    for flag, fld in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            problem_over[fld] = v
    if getattr(args, "seed", None) is not None:
        problem_over["seed"] = args.seed
    _, cfg = builtin(settings["problem"], **problem_over)
    settings["problem_config"] = cfg.as_dict()
    return settings


def materialize(settings):
    """``(equation, ProblemConfig, OptimizerConfig)`` from a settings dict."""
    over = dict(settings["problem_config"])
    over.pop("name", None)
    eq, cfg = builtin(settings["problem"], **over)
    if settings.get("operator"):
        spec = settings["operator"]
        if not isinstance(spec, dict) or "terms" not in spec:
            raise ArgumentError("operator config needs a 'terms' list")
        eq = linear_equation(spec.get("name", "custom"), spec["terms"],
                             int(spec.get("param_dim", len(cfg.true_theta))), cfg.dim,
                             spec.get("coords"))
    try:
        opt = OptimizerConfig(**settings.get("optimizer") or {})
    except TypeError as exc:
        raise ArgumentError(f"bad optimizer config: {exc}") from None
    return eq, cfg, opt


def _load_data(settings, cfg):
    if settings.get("data"):
        return io.read_dataset(settings["data"], np.asarray(cfg.domain))
    return simulate(cfg, cfg.seed)


def _coords(eq, cfg):
    return list(eq.coords) if eq.coords else [f"x_{d + 1}" for d in range(cfg.dim)]


def _outdir(path):
    os.makedirs(path, exist_ok=True)
    return path


# -- commands ---------------------------------------------------------------------


def cmd_simulate(args):
    settings = resolve_settings(args)
    eq, cfg, _ = materialize(settings)
    out = _outdir(args.out)
    data = simulate(cfg, cfg.seed)
    coords = _coords(eq, cfg)
    io.write_dataset(os.path.join(out, "data.csv"), data, coords)
    truth = reference(cfg)
    if cfg.name == "kdv":
        pts, _ = truth.snapshot_points(cfg.domain[0], cfg.domain[1])
        io.write_table(os.path.join(out, "truth.csv"), ["t", "x", "u"], [pts[:, 1], pts[:, 0], truth(pts)])
    else:
        n = int(getattr(args, "truth_n", None) or 1001)
        grid = np.union1d(lattice(cfg.domain, (n,))[:, 0], data.X[:, 0])[:, None]
        ders = truth.derivatives(grid)
        keys = sorted(ders)
        io.write_table(os.path.join(out, "truth.csv"), [*coords, *(label(k, coords) for k in keys)],
                       [grid[:, 0], *(ders[k] for k in keys)])
    io.write_json(os.path.join(out, "config.json"), settings)
    print(f"wrote {data.n} observations to {os.path.join(out, 'data.csv')}")
    return EXIT_OK


def _chain_worker(settings, X, y, domain, seed):
    """Run one chain in a fresh process (equations are rebuilt, not pickled)."""
    eq, cfg, opt = materialize(settings)
    from .gp import Dataset

    data = Dataset(X, y, domain)
    target = build_posterior(eq, cfg, data, settings["method"], settings["refit_every"], opt)
    t0 = time.perf_counter()
    chain = run_chain(target, cfg, seed)
    return chain, time.perf_counter() - t0, getattr(target, "failures", 0)


def _workers(k):
    cap = os.environ.get("GPRC_THREADS")
    try:
        cap = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        raise ArgumentError(f"GPRC_THREADS must be an integer, got {cap!r}") from None
    return max(1, min(k, cap))


def cmd_infer(args):
    settings = resolve_settings(args)
    eq, cfg, opt = materialize(settings)
    out = _outdir(args.out)
    data = _load_data(settings, cfg)
    k = int(settings["chains"])
    if k < 1:
        raise ArgumentError("--chains must be >= 1")
    seeds = [cfg.seed + i for i in range(k)]
    t0 = time.perf_counter()
    jobs = [(settings, data.X, data.y, data.domain, s) for s in seeds]
    nw = _workers(k)
    if nw == 1:
        results = [_chain_worker(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=nw) as pool:
            results = list(pool.map(_chain_worker, *zip(*jobs)))
    wall = time.perf_counter() - t0

    names = [f"theta_{i + 1}" for i in range(eq.param_dim)]
    chains_out, truncated = [], False
    for i, (chain, secs, failures) in enumerate(results):
        fname = "chain.csv" if k == 1 else f"chain_{i + 1}.csv"
        io.write_chain(os.path.join(out, fname), chain, names)
        burn = settings["burn_in"]
        burn = None if burn is None else (int(burn * len(chain)) if burn < 1 else int(burn))
        stats = chain_stats(chain, min(burn, len(chain) - 1) if burn is not None else None)
        stats.pop("histograms")
        chains_out.append({"file": fname, "seed": chain.seed, "n_samples": len(chain),
                           "wall_time_s": secs, "failed_evaluations": failures,
                           "truncated": chain.truncated, "error": chain.error, **stats})
        truncated |= chain.truncated
    summary = {
        "method": settings["method"],
        "param_names": names,
        "mean": np.mean([c["mean"] for c in chains_out], axis=0).tolist(),
        "std": np.mean([c["std"] for c in chains_out], axis=0).tolist(),
        "acceptance_rate": float(np.mean([c["acceptance_rate"] for c in chains_out])),
        "wall_time_s": wall,
        "truncated": truncated,
        "chains": chains_out,
        "config": settings,
    }
    io.write_json(os.path.join(out, "summary.json"), summary)
    print(f"posterior mean {np.round(summary['mean'], 4).tolist()} "
          f"std {np.round(summary['std'], 4).tolist()} "
          f"acceptance {summary['acceptance_rate']:.3f} ({wall:.1f} s)")
    return EXIT_NUMERIC if truncated else EXIT_OK


def cmd_predict(args):
    settings = resolve_settings(args)
    eq, cfg, opt = materialize(settings)
    out = _outdir(args.out)
    data = _load_data(settings, cfg)
    theta = np.asarray(args.theta if args.theta is not None else cfg.true_theta, dtype=float)
    if theta.shape != (eq.param_dim,):
        raise ArgumentError(f"--theta needs {eq.param_dim} values")
    if args.grid_n:
        counts = tuple(args.grid_n) * (cfg.dim if len(args.grid_n) == 1 else 1)
        if len(counts) != cfg.dim:
            raise ArgumentError(f"--grid-n needs 1 or {cfg.dim} values")
        grid = lattice(data.domain, counts)
    else:
        grid = default_eval_grid(data.domain)
    noise = NoiseConfig(cfg.noise_var, cfg.sigma_r2, cfg.train_noise)
    if settings["method"] == "two-stage":
        est = initial_guess(data, eq, opt, grid, noise=noise)
    else:
        guess = initial_guess(data, eq, opt, grid, noise=noise)
        est = picard_solve(data, eq, theta, PicardConfig(cfg.max_picard, eval_grid=grid),
                           cfg.chi, opt, noise, guess=guess)
    coords = _coords(eq, cfg)
    keys = list(est.mean)
    header, cols = list(coords), list(grid.T)
    for key in keys:
        name = label(key, coords)
        header += [f"{name}_mean", f"{name}_var"]
        cols += [est.mean[key], est.var[key]]
    io.write_table(os.path.join(out, "field.csv"), header, cols)
    io.write_json(os.path.join(out, "config.json"), {**settings, "theta": theta.tolist(),
                                                     "grid_shape": [len(grid), cfg.dim]})
    print(f"wrote {len(grid)} grid points to {os.path.join(out, 'field.csv')}")
    return EXIT_OK


def cmd_report(args):
    out = _outdir(args.out)
    chains, names = [], None
    for path in args.chains:
        chain, nm = io.read_chain(path)
        if names is not None and nm != names:
            raise ArgumentError(f"{path}: parameters {nm} differ from {names}")
        names = nm
        if len(chain) == 0:
            raise io.ParseError(path, 2, "chain has no samples")
        chains.append(chain)
    burns = []
    for c in chains:
        b = args.burn_in
        b = int(0.2 * len(c)) if b is None else (int(b * len(c)) if b < 1 else int(b))
        if not 0 <= b < len(c):
            raise ArgumentError(f"burn-in {b} leaves no samples")
        burns.append(b)
    kept = [c.samples[b:] for c, b in zip(chains, burns)]
    stems = [os.path.splitext(os.path.basename(p))[0] for p in args.chains]
    stems = [s if stems.count(s) == 1 else f"{s}_{i + 1}" for i, s in enumerate(stems)]
    report = {"files": list(args.chains), "burn_in": burns, "params": {}}
    for d, name in enumerate(names):
        allv = np.concatenate([s[:, d] for s in kept])
        lo, hi = float(allv.min()), float(allv.max())
        if hi <= lo:
            lo, hi = lo - 0.5, hi + 0.5
        edges = np.linspace(lo, hi, args.bins + 1)
        counts = [np.histogram(s[:, d], bins=edges)[0] for s in kept]
        io.write_table(os.path.join(out, f"hist_{name}.csv"), ["bin_lo", "bin_hi", *stems],
                       [edges[:-1], edges[1:], *counts])
        report["params"][name] = {
            stem: {"mean": float(s[:, d].mean()), "std": float(s[:, d].std()), "n": int(len(s))}
            for stem, s in zip(stems, kept)
        }
    io.write_json(os.path.join(out, "report.json"), report)
    print(f"wrote {len(names)} histogram files to {out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _common(p, model_flags=True):
    p.add_argument("--problem", choices=["oscillator", "vdp", "kdv"], help="built-in problem")
    p.add_argument("--config", help="JSON settings file (flags override it)")
    p.add_argument("--seed", type=int, help="data and chain seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--noise-var", type=float, help="observation noise variance")
    if model_flags:
        p.add_argument("--data", help="dataset CSV x_1..x_D,y (default: simulate)")
        p.add_argument("--method", choices=["gprc", "two-stage"])
        p.add_argument("--sigma-r2", type=float, help="residual pseudo-observation variance")
        p.add_argument("--chi-m", type=int, help="extended-set size")
        p.add_argument("--chi-width", type=float, nargs="+", help="extended-set half-width")
        p.add_argument("--max-picard", type=int, help="linearization iterations")
        p.add_argument("--train-noise", action=argparse.BooleanOptionalAction, default=None,
                       help="train the observation noise variance")
        p.add_argument("--refit-every", type=int, help="retrain hyperparameters every k evaluations")


def build_parser():
    parser = argparse.ArgumentParser(prog="gprc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a noisy dataset and the clean solution")
    _common(p, model_flags=False)
    p.add_argument("--truth-n", type=int, help="dense grid size for ODE truth.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="sample the parameter posterior")
    _common(p)
    p.add_argument("--alpha", type=float, help="likelihood scale")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--proposal-sd", type=float, nargs="+")
    p.add_argument("--init", type=float, nargs="+", help="chain start (default from problem)")
    p.add_argument("--chains", type=int, help="independent chains, seeds seed..seed+k-1")
    p.add_argument("--burn-in", type=float, help="fraction (<1) or count of discarded samples")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("predict", help="posterior field and derivatives at fixed theta")
    _common(p)
    p.add_argument("--theta", type=float, nargs="+", help="parameters (default: truth)")
    p.add_argument("--grid-n", type=int, nargs="+", help="grid points per dimension")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("report", help="histogram CSVs from chain files")
    p.add_argument("chains", nargs="+", help="chain CSV files")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--burn-in", type=float, help="fraction (<1) or count; default 0.2")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report" and args.bins < 1:
            raise ArgumentError("--bins must be >= 1")
        return args.func(args)
    except io.ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (IllConditionedError, TrainingError, SolverBlowupError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (GprcError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
