"""Statistical-rate experiment for the short-trajectory estimator.

Runs the one-dimensional Lipschitz setting with the balanced step size
and writes results.csv / plot.csv / report.json.  The fitted RMSE slope
should be close to -1/5.

Usage: python scripts/stubble_rate.py --out out/stubble [--replicates 50]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from flowfit import harness


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=str, default="out/stubble-rate")
    parser.add_argument("--replicates", type=int, default=50)
    parser.add_argument("--seed", type=int, default=2024)
    parser.add_argument("--sigma", type=float, default=0.1)
    args = parser.parse_args()

    cfg = harness.ExperimentConfig(
        model="stubble-lip",
        field="cubic",
        ns=tuple(2 ** k for k in range(8, 15)),
        sigma=args.sigma,
        dt_rule="balanced",
        replicates=args.replicates,
        seed=args.seed,
        queries=harness.QuerySpec(kind="grid", per_dim=9, margin=0.15),
    )
    result = harness.run_experiment(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_results_csv(result, out / "results.csv")
    harness.write_plot_csv(result, out / "plot.csv")
    harness.write_report_json(result, out / "report.json")
    report = result.report
    print(f"slope {report.slope:.4f} vs reference {report.reference.exponent} "
          f"-> {'pass' if report.passed else 'fail'}")


if __name__ == "__main__":
    main()
