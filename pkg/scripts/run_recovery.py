"""Synthetic truth recovery over several seeds: reduction, holdout ratio and wall time."""

import argparse
import time

from aquacal.calibration import LoopConfig, calibrate
from aquacal.neat import NeatConfig
from aquacal.rules import compile_rules, parse_rules
from aquacal.synth import make_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()
    print("seed,baseline,calibrated,reduction,holdout,holdout_ratio,generations,simulations,seconds")
    for seed in range(1, args.seeds + 1):
        t0 = time.perf_counter()
        p = make_problem(seed=seed, noise=args.noise)
        space = compile_rules(parse_rules(p.rules_text), p.model)
        run = calibrate(p.model, space, p.measurements, p.sensors, NeatConfig(seed=seed),
                        LoopConfig(threads=args.threads))
        ratio = run.validation_objective / run.calibration_objective if run.calibration_objective else float("nan")
        print(f"{seed},{run.baseline_objective:.6g},{run.calibration_objective:.6g},{run.reduction:.4f},"
              f"{run.validation_objective:.6g},{ratio:.3f},{run.generations},{run.simulations},"
              f"{time.perf_counter() - t0:.1f}", flush=True)


if __name__ == "__main__":
    main()
