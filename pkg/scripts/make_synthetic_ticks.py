"""Write a leader/follower pair of synthetic tick files with known coupling.

Usage: python3 scripts/make_synthetic_ticks.py OUT_DIR [--minutes N] [--seed S]
"""
import argparse
from pathlib import Path

from wismc.statistics import cross_correlation
from wismc.synthetic import bivariate_ground_truth, write_tick_csv


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--minutes", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args(argv)
    a.out.mkdir(parents=True, exist_ok=True)
    lead, foll = bivariate_ground_truth(a.minutes, seed=a.seed)
    for series in (lead, foll):
        path = write_tick_csv(a.out / f"{series.symbol}.csv", series)
        print(f"wrote {path}")
    print(f"ground-truth correlation {cross_correlation(lead, foll):.3f}")


if __name__ == "__main__":
    main()
