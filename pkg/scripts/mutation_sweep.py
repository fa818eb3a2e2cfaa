"""Disable each defence in turn and report the first trial that exposes it.

    python3 scripts/mutation_sweep.py                 # both variants, 50 seeds
    python3 scripts/mutation_sweep.py --variant auth --ns 4,7
"""
import argparse
import sys

from byzlattice.harness import mutation_matrix, run_trial
from byzlattice.protocol import MUTATIONS

DEFAULT_NS = {"unauth": "6,11", "auth": "4,7"}


def sweep(mutation: str, variant: str, ns: list, seeds: int):
    tried = 0
    for cfg in mutation_matrix(mutation, ns, variant, seeds=range(seeds)):
        tried += 1
        res = run_trial(cfg)
        if res.violations:
            return tried, cfg, sorted({v["check"] for v in res.violations})
    return tried, None, []


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", choices=("unauth", "auth", "both"), default="both")
    ap.add_argument("--ns", help="comma list of system sizes (default per variant)")
    ap.add_argument("--seeds", type=int, default=50)
    args = ap.parse_args()
    missed = 0
    for variant in ("unauth", "auth") if args.variant == "both" else (args.variant,):
        ns = [int(x) for x in (args.ns or DEFAULT_NS[variant]).split(",")]
        for mutation in MUTATIONS:
            tried, cfg, checks = sweep(mutation, variant, ns, args.seeds)
            if cfg is None:
                missed += 1
                print(f"{variant:6} {mutation:16} MISSED after {tried} trials")
            else:
                print(f"{variant:6} {mutation:16} caught at n={cfg.n} seed={cfg.seed} after {tried} trials: {','.join(checks)}")
    return 1 if missed else 0


if __name__ == "__main__":
    sys.exit(main())
