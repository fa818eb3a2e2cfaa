"""Command line entry point.

    byzlattice [run] --n 6,11 --variant unauth --adversary all --trials 50
    byzlattice brb-enum --width 1000

Exit codes for ``run``: 0 all trials clean, 1 property violation, 2 bad
configuration, 3 a trial did not terminate (and nothing else failed).
With ``--mutation`` a detected violation is the expected outcome: 4 means
the checkers caught the mutation, 5 means they did not.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from typing import Any, Optional

from . import checks
from .adversary import MUTATION_TARGETS, catalog
from .harness import TrialConfig, matrix, run_trial, summarize
from .lattice import TREE_RULES
from .protocol import MUTATIONS
from .simnet import enumerate_brb

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_NONTERM = 0, 1, 2, 3
EXIT_MUTATION_CAUGHT, EXIT_MUTATION_MISSED = 4, 5

# keys accepted in a --config file; same spelling as the flags
CONFIG_KEYS = (
    "n", "f", "t", "variant", "adversary", "seed", "trials", "delay", "fairness_D",
    "lattice", "trace", "out", "check", "mutation", "tree", "step_budget",
)
DEFAULTS = {
    "n": "6", "f": None, "t": "0,half,f", "variant": "unauth", "adversary": "all",
    "seed": 0, "trials": 1, "delay": "adversarial", "fairness_D": "10,100",
    "lattice": "set", "trace": None, "out": None, "check": None, "mutation": None,
    "tree": "strict", "step_budget": None,
}


class ConfigError(ValueError):
    pass


def _csv(value: Any) -> list[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [x.strip() for x in str(value).split(",") if x.strip()]


def _ints(value: Any, name: str) -> list[int]:
    try:
        return [int(x) for x in _csv(value)]
    except ValueError:
        raise ConfigError(f"--{name} expects integers, got {value!r}") from None


def _ts(value: Any) -> list:
    out: list = []
    for x in _csv(value):
        if x in ("half", "f"):
            out.append(x)
        else:
            try:
                out.append(int(x))
            except ValueError:
                raise ConfigError(f"--t expects integers or half/f, got {x!r}") from None
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="byzlattice", description="Byzantine lattice agreement simulator")
    sub = ap.add_subparsers(dest="cmd")
    run = sub.add_parser("run", help="run trials and check them (default)")
    _run_args(run)
    en = sub.add_parser("brb-enum", help="bounded exhaustive enumeration of one BRB instance")
    en.add_argument("--n", type=int, default=4)
    en.add_argument("--f", type=int, default=1)
    en.add_argument("--width", type=int, default=1000, help="states kept per search layer")
    en.add_argument("--mode", choices=("init", "split", "full"), default="split", help="what the Byzantine sender sends")
    en.add_argument("--weak", action="store_true", help="deliver on f READYs (mutation)")
    en.add_argument("--seed", type=int, default=0)
    en.add_argument("--out")
    return ap


def _run_args(ap: argparse.ArgumentParser) -> None:
    # everything defaults to None so config-file values can show through
    ap.add_argument("--config", help="JSON file of flat key/value defaults")
    ap.add_argument("--n", help="comma list of system sizes")
    ap.add_argument("--f", help="fault bound (default: largest the variant tolerates)")
    ap.add_argument("--t", help="comma list of Byzantine counts; 'half' and 'f' are symbolic")
    ap.add_argument("--variant", choices=("unauth", "auth"))
    ap.add_argument("--adversary", help="comma list of strategies or 'all'")
    ap.add_argument("--seed", type=int, help="first seed")
    ap.add_argument("--trials", type=int, help="seeds per configuration")
    ap.add_argument("--delay", help="'adversarial' or 'uniform:lo,hi'")
    ap.add_argument("--fairness-D", dest="fairness_D", help="comma list; alternates by seed")
    ap.add_argument("--lattice", help="set or maxint")
    ap.add_argument("--trace", help="write JSONL traces here (index suffix when several trials)")
    ap.add_argument("--out", help="write results JSON here")
    ap.add_argument("--check", help=f"comma list of checker families ({','.join(checks.CHECKS)})")
    ap.add_argument("--mutation", choices=MUTATIONS, help="disable one defense and expect a violation")
    ap.add_argument("--tree", choices=TREE_RULES, help="label tree rule")
    ap.add_argument("--step-budget", dest="step_budget", type=int)
    ap.add_argument("--stop-on-violation", action="store_true")
    ap.add_argument("-v", "--verbose", action="store_true", help="one line per trial")


def resolve_options(args: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        for k, v in data.items():
            key = k.replace("-", "_")
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key {k!r}")
            opts[key] = v
    for key in CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            opts[key] = v
    return opts


def configs_from(opts: dict) -> list[TrialConfig]:
    variant = opts["variant"]
    if variant not in ("unauth", "auth"):
        raise ConfigError(f"unknown variant {variant!r}")
    ns = _ints(opts["n"], "n")
    fs = None if opts["f"] is None else _ints(opts["f"], "f")
    mutation = opts["mutation"]
    if mutation is not None and mutation not in MUTATIONS:
        raise ConfigError(f"unknown mutation {mutation!r}")
    adv = _csv(opts["adversary"])
    if adv == ["all"]:
        adversaries = [MUTATION_TARGETS[mutation]] if mutation else catalog(variant)
    else:
        adversaries = adv
    ts = _ts(opts["t"])
    seed = int(opts["seed"])
    trials = int(opts["trials"])
    if trials < 1:
        raise ConfigError("--trials must be at least 1")
    common = dict(
        delay=opts["delay"],
        lattice=opts["lattice"],
        tree=opts["tree"],
        mutations=(mutation,) if mutation else (),
        checks=tuple(_csv(opts["check"])) if opts["check"] else (),
        step_budget=None if opts["step_budget"] is None else int(opts["step_budget"]),
    )
    cfgs = matrix(
        ns, variant, fs=fs, ts=ts, adversaries=adversaries,
        seeds=range(seed, seed + trials), Ds=_ints(opts["fairness_D"], "fairness-D"), **common,
    )
    for c in cfgs:
        try:
            c.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
    return cfgs


def _trace_path(base: str, i: int, total: int) -> str:
    if total == 1:
        return base
    stem, dot, ext = base.rpartition(".")
    return f"{stem}.{i}.{ext}" if dot else f"{base}.{i}"


def cmd_run(args: argparse.Namespace) -> int:
    try:
        opts = resolve_options(args)
        if opts["mutation"] and opts["t"] == DEFAULTS["t"]:
            opts["t"] = "f"  # a mutation needs its attacker present
        cfgs = configs_from(opts)
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    results = []
    for i, cfg in enumerate(cfgs):
        res = run_trial(cfg, keep_trace=bool(opts["trace"]))
        if opts["trace"]:
            res.trace.write_jsonl(_trace_path(opts["trace"], i, len(cfgs)))
            res.trace = None
        results.append(res)
        if args.verbose or res.violations:
            status = "ok" if res.ok else "FAIL " + ",".join(sorted({v["check"] for v in res.violations}))
            print(
                f"n={cfg.n} f={cfg.f} t={cfg.t} {cfg.variant} {cfg.adversary} seed={cfg.seed} D={cfg.D} "
                f"rounds={res.rounds} msgs={res.messages} steps={res.steps} {status}",
                flush=True,
            )
        if args.stop_on_violation and res.violations:
            break
    summary = summarize(results, (time.perf_counter() - t0) * 1000)
    print(json.dumps(summary, sort_keys=True))
    if opts["out"]:
        doc = {
            "config": opts,
            "per_trial": [r.as_dict() for r in results],
            "summary": summary,
        }
        with open(opts["out"], "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True, default=str)
    return exit_code(results, opts["mutation"] is not None)


def exit_code(results: list, mutation: bool) -> int:
    failed = [r for r in results if r.violations]
    if mutation:
        return EXIT_MUTATION_CAUGHT if failed else EXIT_MUTATION_MISSED
    if any(v["check"] != "termination" for r in failed for v in r.violations):
        return EXIT_VIOLATION
    if any(not r.terminated for r in results):
        return EXIT_NONTERM
    return EXIT_OK


def cmd_enum(args: argparse.Namespace) -> int:
    try:
        res = enumerate_brb(args.n, args.f, weak=args.weak, max_width=args.width, byz_sends=args.mode, seed=args.seed)
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    doc = asdict(res)
    print(json.dumps(doc, sort_keys=True))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
    if args.weak:
        return EXIT_MUTATION_CAUGHT if res.violations else EXIT_MUTATION_MISSED
    return EXIT_VIOLATION if res.violations else EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in ("run", "brb-enum", "-h", "--help"):
        argv = ["run"] + argv
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    if args.cmd == "brb-enum":
        return cmd_enum(args)
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
