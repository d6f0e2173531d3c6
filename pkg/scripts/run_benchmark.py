"""Run the desk-scale synthetic benchmark and print the result table and claim checks.

    python3 scripts/run_benchmark.py [--seed 0] [--out bench.json]
"""

import argparse
import json
from dataclasses import replace

from crfmatch.benchmark import BenchmarkConfig, run_benchmark


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=BenchmarkConfig().seed)
    ap.add_argument("--out", default=None, help="optional JSON dump of the full summary")
    args = ap.parse_args(argv)

    bench = run_benchmark(replace(BenchmarkConfig(), seed=args.seed))
    print(bench.table())
    print()
    for name, check in bench.checks.items():
        print(f"{name:<15} {'ok' if check['ok'] else 'FAILED'}")
    trend = bench.checks["interval_trend"]["per_regularizer"]
    for reg, t in trend.items():
        print(f"  {reg}: point {t['point'][0]:.3f} -> {t['point'][1]:.3f}, path {t['path'][0]:.3f} -> {t['path'][1]:.3f}")
    print(f"\n{bench.seconds:.1f} s")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(bench.summary(), fh, indent=1)


if __name__ == "__main__":
    main()
