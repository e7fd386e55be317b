"""Run the scaled experiment protocols and print their outcomes as JSON lines.

    python scripts/run_protocols.py smudge --seeds 0 1 2
    python scripts/run_protocols.py cleaning --kind uniform --levels 0.2 0.4 0.6
    python scripts/run_protocols.py all --out results.jsonl
    python scripts/run_protocols.py configs --out-dir configs/
"""

import argparse
import json
import os
import sys
import time

from dac import config as C
from dac import experiments as X
from dac.metrics import to_jsonable

PROTOCOLS = ("smudge", "class_randomization", "degradation", "cleaning", "sweep", "ce_recovery")


def outcomes(name, args):
    if name == "smudge":
        return [X.smudge_protocol(s) for s in args.seeds]
    if name == "class_randomization":
        return [X.class_randomization_protocol(s) for s in args.seeds]
    if name == "degradation":
        return [X.degradation_protocol(s) for s in args.seeds]
    if name == "cleaning":
        kinds = [args.kind] if args.kind else ["uniform", "class_dependent"]
        out = []
        for kind in kinds:
            levels = args.levels or ([0.2, 0.4, 0.6] if kind == "uniform" else [0.3])
            out.extend(X.cleaning_protocol(kind, lv, s) for lv in levels for s in args.seeds)
        return out
    if name == "sweep":
        return [{"seed": s, "runs": X.saturation_sweep(s)} for s in args.seeds]
    modes = ("zero_mass", "large_alpha", "large_alpha_standard_init")
    return [{"mode": m, "max_gap": X.ce_recovery(args.seeds[0], m)[0]} for m in modes]


def write_configs(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    bases = {
        "smudge": X.SMUDGE,
        "class_randomization": X.CLASS_RANDOMIZATION,
        "degradation": X.DEGRADATION,
        "cleaning_uniform_0.4": dict(X.CLEANING, **{"noise.kind": "uniform", "noise.fraction": 0.4}),
        "cleaning_class_dependent_0.3": dict(X.CLEANING, **{"noise.kind": "class_dependent", "noise.fraction": 0.3}),
    }
    for name, base in bases.items():
        path = os.path.join(out_dir, f"{name}.txt")
        with open(path, "w") as f:
            f.write(C.dump(X.experiment(base, 0)))
        print(path)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("protocol", choices=PROTOCOLS + ("all", "configs"))
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--kind", choices=["uniform", "class_dependent"])
    p.add_argument("--levels", type=float, nargs="+")
    p.add_argument("--out", help="append JSON lines here as well as to stdout")
    p.add_argument("--out-dir", default="configs", help="target directory for 'configs'")
    args = p.parse_args(argv)
    if args.protocol == "configs":
        write_configs(args.out_dir)
        return 0
    names = PROTOCOLS if args.protocol == "all" else (args.protocol,)
    sink = open(args.out, "a") if args.out else None
    try:
        for name in names:
            t0 = time.time()
            for o in outcomes(name, args):
                line = json.dumps({"protocol": name, "result": to_jsonable(o)}, sort_keys=True)
                print(line, flush=True)
                if sink:
                    sink.write(line + "\n")
            print(f"# {name}: {time.time() - t0:.1f}s", file=sys.stderr)
    finally:
        if sink:
            sink.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
