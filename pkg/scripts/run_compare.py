"""ES-NEAT against the six baselines on one synthetic problem under a shared evaluation budget."""

import argparse

import numpy as np

from aquacal.comparison import compare
from aquacal.rules import compile_rules, parse_rules
from aquacal.synth import make_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem-seed", type=int, default=1)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--budget", type=int, default=1000)
    ap.add_argument("--methods", default="mc,lhs,sa,pso,sceua,ga,es-neat")
    args = ap.parse_args()
    p = make_problem(seed=args.problem_seed)
    space = compile_rules(parse_rules(p.rules_text), p.model)
    finals: dict[str, list[float]] = {}
    for seed in range(1, args.seeds + 1):
        rows = compare(p.model, space, p.measurements, p.sensors, args.methods.split(","), args.budget, seed)
        print(f"seed {seed}: " + ", ".join(f"{r.method} {r.final_best:.4f}" for r in rows), flush=True)
        for r in rows:
            finals.setdefault(r.method, []).append(r.final_best)
    print("method,median,min,max")
    for method, values in sorted(finals.items(), key=lambda kv: np.median(kv[1])):
        print(f"{method},{np.median(values):.4f},{min(values):.4f},{max(values):.4f}")


if __name__ == "__main__":
    main()
