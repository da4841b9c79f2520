"""Per-step log-bound report for a run: literal upper bound b versus max(b, 0).

    python3 scripts/bound_report.py configs/default.cfg
"""
import logging
import math
import sys

import numpy as np

from jko_corrosion.io_cli import parse_config, simulate


def main(path):
    logging.basicConfig(level=logging.ERROR)
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    traj, led, code, _ = simulate(cfg)
    pp = cfg.penalty0()
    print(f"a = {pp.a:.6f}  b = {pp.b:.6f}  ln rho_+ = {math.log(cfg.params.rho_plus):.6f}")
    print("step  max ln rho  excess over b  excess over max(b, 0)")
    for k, s in enumerate(traj.states):
        top = float(np.log(s.density.values).max())
        if k % max(1, len(traj) // 10) == 0 or k == len(traj) - 1:
            print(f"{k:4d}  {top:10.6f}  {top - pp.b:13.6f}  {top - max(pp.b, 0.0):21.6f}")
    print(f"steps with literal violations: {len({v['step'] for v in led.bound_violations})}")
    print(f"steps with corrected violations: {len({v['step'] for v in led.corrected_bound_violations})}")
    return code


if __name__ == "__main__":
    sys.exit(main(sys.argv[1] if len(sys.argv) > 1 else "configs/default.cfg"))
