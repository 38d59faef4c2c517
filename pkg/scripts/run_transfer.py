"""Archive-seeded versus cold calibration on revised networks.

For each seed: calibrate the original problem, archive it, build a 10% variant
of the network, calibrate the variant cold, then run it again seeded from the
archive and count generations until the seeded run matches the cold result.
"""

import argparse
import math

import numpy as np

from aquacal import archive as arch
from aquacal.calibration import LoopConfig, calibrate, prepare
from aquacal.neat import NeatConfig
from aquacal.rules import compile_rules, parse_rules, rules_fingerprint
from aquacal.synth import make_problem, variant


class Reached(Exception):
    pass


def trial(seed: int, fraction: float) -> tuple[float, int, int | None]:
    p = make_problem(seed=seed)
    rules = parse_rules(p.rules_text)
    space = compile_rules(rules, p.model)
    ctx = prepare(p.model, space, p.measurements, p.sensors)
    run = calibrate(p.model, space, p.measurements, p.sensors, NeatConfig(seed=seed), context=ctx)
    saved = arch.build(run, ctx, p.model, rules_fingerprint(rules), {}, "1970-01-01T00:00:00Z")

    revised = make_problem(seed=seed, base=variant(p.model, seed, fraction))
    vspace = compile_rules(parse_rules(revised.rules_text), revised.model)
    config = NeatConfig(seed=seed + 100)
    cold = calibrate(revised.model, vspace, revised.measurements, revised.sensors, config)
    target, cold_gens = cold.calibration_objective, len(cold.combined_history)
    decision = arch.seed_calibration(saved, revised.model, vspace)
    seen = []

    def watch(group, generation, pop, incumbent):
        seen.append(incumbent)
        if incumbent <= target or len(seen) >= cold_gens:
            raise Reached

    try:
        calibrate(revised.model, vspace, revised.measurements, revised.sensors, config,
                  LoopConfig(max_outer=10_000, min_improvement=0.0, target=target),
                  seeds=decision.genomes, seed_initial=decision.initial, on_generation=watch)
    except Reached:
        pass
    hit = next((i + 1 for i, v in enumerate(seen) if v <= target), None)
    return target, cold_gens, hit


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--fraction", type=float, default=0.1)
    args = ap.parse_args()
    print("seed,cold_final,cold_generations,seeded_generations,ratio")
    ratios = []
    for seed in range(1, args.seeds + 1):
        target, cold_gens, hit = trial(seed, args.fraction)
        ratio = math.inf if hit is None else hit / cold_gens
        ratios.append(ratio)
        print(f"{seed},{target:.6g},{cold_gens},{hit if hit is not None else 'never'},{ratio:.3f}", flush=True)
    print(f"median ratio {np.median(ratios):.3f}")


if __name__ == "__main__":
    main()
