"""Reduced-layout comparison of MAPPO, CenPPO and the baseline.

    python3 scripts/run_trends.py --steps 200000 --seeds 0 1 2 --out results/trends
"""

import argparse
import logging
from pathlib import Path

from vlcnoma.trends import criterion_outcomes, run_trends, summary_table


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=200_000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--out", type=Path, default=Path("results/trends"))
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    result = run_trends(args.seeds, args.steps, args.episodes, out=args.out)
    print(summary_table(result))
    for name, ok in criterion_outcomes(result).items():
        print(f"{name:<18} {'PASS' if ok else 'FAIL'}")


if __name__ == "__main__":
    main()
