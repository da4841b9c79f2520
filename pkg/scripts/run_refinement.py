"""Refinement study from a config file: prints the table and writes it plus a gnuplot script.

    python3 scripts/run_refinement.py configs/default.cfg --levels 3 --oracle --out results
"""
import argparse
import logging
import os

from jko_corrosion.io_cli import atomic_write, parse_config, refinement_study


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--levels", type=int, default=3)
    ap.add_argument("--oracle", action="store_true")
    ap.add_argument("--no-weak", action="store_true", help="skip weak-form and VI residuals")
    ap.add_argument("--out", default=".")
    args = ap.parse_args()
    logging.basicConfig(level=logging.ERROR)
    with open(args.config, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    rep = refinement_study(cfg, args.levels, oracle=args.oracle, weak=not args.no_weak)
    os.makedirs(args.out, exist_ok=True)
    atomic_write(os.path.join(args.out, "refinement.csv"), rep.table_text())
    atomic_write(os.path.join(args.out, "refinement.plot"), rep.plot_script())
    print(rep.table_text(), end="")
    if rep.failed_level is not None:
        print(rep.message)


if __name__ == "__main__":
    main()
