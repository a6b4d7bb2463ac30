"""Command line front end.

Four subcommands share one JSON config file describing the experiment
(see :class:`~flowfit.harness.ExperimentConfig` for the keys):

- ``simulate``   write one synthetic dataset (observations + meta)
- ``estimate``   evaluate the estimator of a stored dataset on queries
- ``benchmark``  full Monte Carlo run: results, report, plot CSVs
- ``rates``      fit a rate slope from an existing results CSV

Any config key can be overridden with ``--set key=value`` (the value
is parsed as JSON when possible, kept as a string otherwise).  All
outputs are deterministic for a fixed config.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import harness, snake, stubble
from .flow import (
    make_field,
    read_dataset_meta,
    read_observation_csv,
    write_dataset_meta,
    write_observation_csv,
)
from .harness import ExperimentConfig, fit_rate, reference_rate
from .localpoly import SingularDesign

__all__ = ["main", "build_parser"]


def _apply_overrides(data: dict, pairs: list[str]) -> dict:
    out = dict(data)
    for pair in pairs:
        key, sep, raw = pair.partition("=")
        if not sep:
            raise SystemExit(f"override {pair!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[key] = value
    return out


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        data = json.loads(Path(args.config).read_text())
    data = _apply_overrides(data, args.set or [])
    return ExperimentConfig.from_dict(data)


def _fmt(x: float) -> str:
    return repr(float(x))


def _cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    fld = make_field(cfg.field, cfg.d)
    beta = cfg.effective_beta(fld)
    n = args.n if args.n is not None else cfg.ns[0]
    dt = cfg.dt_for(n, beta, fld.dim)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.model.startswith("stubble"):
        ds = stubble.generate_stubble(
            fld, harness.stubble_grid_size(n, fld.dim), dt,
            sigma=cfg.sigma, seed=cfg.seed, noise=cfg.noise, beta=beta,
        )
        obs = stubble.to_observations(ds)
        meta = {"kind": "stubble", "dt": ds.dt, "beta": ds.beta, **ds.meta}
    else:
        ds = snake.generate_snake(
            fld, np.asarray(cfg.x1, dtype=float), n, dt,
            sigma=cfg.sigma, seed=cfg.seed, noise=cfg.noise,
        )
        obs = snake.to_observations(ds)
        meta = {"kind": "snake", "dt": ds.dt, "x1": list(map(float, ds.x1)), **ds.meta}
    write_observation_csv(out / "observations.csv", obs)
    write_dataset_meta(out / "meta.json", meta)
    print(f"wrote {len(obs)} trajectories to {out}")
    return 0


def _load_dataset(data_dir: Path):
    meta = read_dataset_meta(data_dir / "meta.json")
    obs = read_observation_csv(data_dir / "observations.csv")
    if meta["kind"] == "stubble":
        ds = stubble.stubble_from_observations(
            obs, dt=float(meta["dt"]), beta=int(meta["beta"]), meta=meta
        )
    else:
        ds = snake.snake_from_observations(
            obs, x1=np.asarray(meta["x1"], dtype=float), dt=float(meta["dt"]), meta=meta
        )
    return meta["kind"], ds


def _estimate_queries(cfg: ExperimentConfig, kind: str, d: int, curve) -> np.ndarray:
    qspec = cfg.queries
    if qspec is None:
        qspec = harness.QuerySpec(kind="grid") if kind == "stubble" else \
            harness.QuerySpec(kind="tube")
    rng = np.random.default_rng([cfg.seed, 24301, 0])
    curve_pts = None
    if qspec.kind == "tube":
        if curve is None:
            raise SystemExit("tube queries are only available for snake datasets")
        curve_pts = curve.grid_states
    return qspec.build(d, rng, curve_pts)


def _cmd_estimate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    kind, ds = _load_dataset(Path(args.data))
    d = ds.dim
    curve = None
    kernel = harness.resolve_kernel(cfg.kernel)
    if kind == "snake":
        curve = snake.fit_curve(
            ds, beta=cfg.effective_beta(make_field(cfg.field, cfg.d)),
            kernel=kernel, bandwidth=cfg.bandwidth,
            bandwidth_constant=cfg.bandwidth_constant,
        )
    queries = _estimate_queries(cfg, kind, d, curve)

    rows = []
    reg = stubble.IncrementRegressor(
        kernel=kernel, bandwidth=cfg.bandwidth,
        bandwidth_constant=cfg.bandwidth_constant,
    )
    for x in queries:
        value, provenance, diam, stab, times = None, "failed", "", "", ""
        try:
            if cfg.model == "stubble-lip":
                value = stubble.estimate_lipschitz(
                    ds, x, bandwidth=cfg.bandwidth, kernel=kernel,
                    bandwidth_constant=cfg.bandwidth_constant,
                )
                provenance = "regression"
            elif cfg.model == "stubble-gen":
                value = stubble.estimate_general(ds, x, reg)
                provenance = "regression"
            elif cfg.model == "snake-lip":
                value = snake.estimate_lipschitz(x, curve)
                provenance = "nearest-neighbor"
            else:
                result = snake.estimate_general(
                    x, curve, cfg.stencil, fallback=cfg.fallback
                )
                value = result.value
                provenance = result.provenance
                if result.stencil is not None:
                    diam = _fmt(result.stencil.diameter)
                    stab = _fmt(result.stencil.stability)
                    times = ";".join(_fmt(t) for t in result.stencil.times)
        except (SingularDesign, snake.NoStencilFound):
            pass
        fhat = [""] * d if value is None else [_fmt(v) for v in value]
        rows.append([_fmt(v) for v in x] + fhat + [provenance, diam, stab, times])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = (
        [f"x_{k + 1}" for k in range(d)]
        + [f"fhat_{k + 1}" for k in range(d)]
        + ["provenance", "stencil_diameter", "stencil_stability", "stencil_times"]
    )
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    print(f"wrote {len(rows)} estimates to {out}")
    return 0


def _cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = harness.run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_results_csv(result, out / "results.csv")
    harness.write_plot_csv(result, out / "plot.csv")
    harness.write_report_json(result, out / "report.json")
    report = result.report
    if report is None:
        print(f"{cfg.model}: {len(result.summary)} sample sizes, no rate fit")
    else:
        ref = report.reference
        ref_txt = "none" if ref is None else f"{ref.exponent} ({ref.source})"
        verdict = "pass" if report.passed else "fail"
        print(f"{cfg.model}: slope {report.slope:.4f}, reference {ref_txt}: {verdict}")
    return 0


def _cmd_rates(args: argparse.Namespace) -> int:
    model, rows = harness.read_results_csv(Path(args.results))
    ns = sorted({r.n for r in rows})
    means = []
    for n in ns:
        errs = [r.error for r in rows if r.n == n and np.isfinite(r.error)]
        if not errs:
            raise SystemExit(f"no valid errors at n={n}")
        means.append(float(np.mean(errs)))
    slope, intercept = fit_rate(ns, means)
    out = {
        "model": model, "ns": ns, "mean_errors": means,
        "slope": slope, "intercept": intercept,
    }
    if args.regime is not None:
        ref = reference_rate(model, args.d, args.beta, args.regime, scale="rmse")
        out["reference"] = {
            "exponent": [ref.exponent.numerator, ref.exponent.denominator],
            "log_power": [ref.log_power.numerator, ref.log_power.denominator],
            "source": ref.source,
            "scale": ref.scale,
        }
        out["passed"] = abs(slope - float(ref.exponent)) <= args.tolerance
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowfit",
        description="Estimate the right-hand side of an ODE from noisy trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None,
                       help="JSON experiment config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (value parsed as JSON)")

    p_sim = sub.add_parser("simulate", help="write one synthetic dataset")
    add_config_options(p_sim)
    p_sim.add_argument("--n", type=int, default=None,
                       help="sample size (default: first entry of the config grid)")
    p_sim.add_argument("--out", type=str, required=True, help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_est = sub.add_parser("estimate", help="estimate the field on a stored dataset")
    add_config_options(p_est)
    p_est.add_argument("--data", type=str, required=True,
                       help="dataset directory written by simulate")
    p_est.add_argument("--out", type=str, required=True, help="output CSV path")
    p_est.set_defaults(func=_cmd_estimate)

    p_bench = sub.add_parser("benchmark", help="run the full Monte Carlo experiment")
    add_config_options(p_bench)
    p_bench.add_argument("--out", type=str, required=True, help="output directory")
    p_bench.set_defaults(func=_cmd_benchmark)

    p_rates = sub.add_parser("rates", help="fit a rate slope from a results CSV")
    p_rates.add_argument("--results", type=str, required=True,
                         help="results CSV written by benchmark")
    p_rates.add_argument("--d", type=int, default=None, help="state dimension")
    p_rates.add_argument("--beta", type=int, default=None, help="smoothness order")
    p_rates.add_argument("--regime", type=str, default=None,
                         help="reference regime (balanced, fixed-dt, fixed-horizon)")
    p_rates.add_argument("--tolerance", type=float, default=0.1,
                         help="pass tolerance on the slope")
    p_rates.set_defaults(func=_cmd_rates)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "rates" and args.regime is not None:
        if args.d is None or args.beta is None:
            raise SystemExit("--regime needs --d and --beta")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
