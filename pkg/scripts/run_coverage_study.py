"""Full coverage/MSE simulation study: weighted vs unweighted vs PC prior.

Writes the cell table, per-site records and the weighted-vs-unweighted
comparison to ``--out`` and prints the pass/fail checks used by the
acceptance suite.
"""

import argparse
import json
import time
import warnings
from pathlib import Path

from stormlevels.evaluate import StudyConfig, compare_models, coverage_study
from stormlevels.sampler import SamplerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--replicates", type=int, default=50)
    ap.add_argument("--n-sites", type=int, default=30)
    ap.add_argument("--n-years", type=int, default=50)
    ap.add_argument("--iters", type=int, default=20000)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="results/coverage")
    args = ap.parse_args()
    warnings.simplefilter("ignore")

    cfg = StudyConfig(n_sites=args.n_sites, n_years=args.n_years, replicates=args.replicates,
                      sampler=SamplerConfig(iterations=args.iters))
    t0 = time.perf_counter()
    res = coverage_study(cfg, threads=args.threads)
    secs = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.table.to_csv(out / "table.csv", index=False)
    res.records.to_csv(out / "records.csv", index=False)
    res.failures.to_csv(out / "failures.csv", index=False)
    cmp = compare_models(res.table)
    cmp.to_csv(out / "weighted_vs_unweighted.csv", index=False)
    (out / "config.json").write_text(json.dumps({**res.config, "seconds": secs}, indent=2,
                                                default=str))

    print(res.table.to_string(index=False))
    print()
    print(cmp.to_string(index=False))
    c = cmp.set_index("dependence")
    checks = {
        "weighted >= unweighted - 1 pooled SE (all cells)": bool(
            (c.coverage_weighted >= c.coverage_unweighted - c.pooled_se).all()),
        "weighted coverage in [0.76, 0.98] (all cells)": bool(
            c.coverage_weighted.between(0.76, 0.98).all()),
        "weighted closer to 0.95 (moderate, strong)": bool(
            (c.loc[["moderate", "strong"], "distance_weighted"]
             < c.loc[["moderate", "strong"], "distance_unweighted"]).all()),
        "strong MSE ratio <= 1.25": bool(c.loc["strong", "mse_ratio"] <= 1.25),
        "independent/weak MSE within 10%": bool(
            ((c.loc[["independent", "weak"], "mse_ratio"] - 1).abs() <= 0.10).all()),
    }
    print()
    for k, v in checks.items():
        print(f"{'PASS' if v else 'FAIL'}  {k}")
    print(f"\n{secs / 60:.1f} minutes")


if __name__ == "__main__":
    main()
