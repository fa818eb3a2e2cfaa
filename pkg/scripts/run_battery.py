"""Run the standard safety batteries and record message-count baselines.

    python3 scripts/run_battery.py                      # both variants, 50 seeds
    python3 scripts/run_battery.py --variant auth --seeds 5
    python3 scripts/run_battery.py --write baselines/messages.json
"""
import argparse
import json
import sys
import time

from byzlattice.harness import battery_matrix, message_baselines, run_battery


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--variant", choices=("unauth", "auth", "both"), default="both")
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--write", help="write message baselines JSON here")
    args = ap.parse_args()
    variants = ("unauth", "auth") if args.variant == "both" else (args.variant,)
    baselines, failed = {}, 0
    for variant in variants:
        cfgs = battery_matrix(variant, range(args.seeds))
        t0 = time.perf_counter()

        def progress(i, res):
            if res.violations or (i + 1) % 100 == 0:
                print(f"  {variant} {i + 1}/{len(cfgs)} {time.perf_counter() - t0:.0f}s", file=sys.stderr, flush=True)
            if res.violations:
                print(f"  FAIL {res.config} {res.violations[:3]}", file=sys.stderr, flush=True)

        out = run_battery(cfgs, progress)
        print(variant, json.dumps(out["summary"], sort_keys=True), flush=True)
        failed += out["summary"]["failed_trials"]
        baselines.update(message_baselines(out["results"]))
    if args.write:
        with open(args.write, "w") as fh:
            json.dump(baselines, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
