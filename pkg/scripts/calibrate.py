"""Calibrate the threshold constant c on a Grashof ladder.

Prints the bracket and writes the full evaluation log as JSON.
The package default DEFAULT_C is the upper end of this bracket.
"""
import argparse
import json
import logging
from pathlib import Path

from nudgeflow.assimilation import AssimilationConfig, calibrate_c


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--grashof", type=float, nargs="+", default=[10, 50, 250])
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--budget", type=int, default=40)
    p.add_argument("--out", type=Path, default=Path("calibration.json"))
    a = p.parse_args()
    logging.basicConfig(level=logging.ERROR)
    res = calibrate_c(a.nu, a.grashof, AssimilationConfig(n=a.n), budget=a.budget)
    a.out.write_text(json.dumps(res.to_dict(), indent=2) + "\n")
    flag = " (low confidence)" if res.low_confidence else ""
    print(f"c in [{res.c_lo:.4g}, {res.c_hi:.4g}] converged={res.converged}{flag} after {res.simulations} runs")
    print(f"log written to {a.out}")


if __name__ == "__main__":
    main()
