"""Run every experiment config in scripts/configs and print a short report.

    python scripts/run_all.py --out results/ [--threads K] [--only mse_d4 clt_d6]
"""

import argparse
import json
import sys
import time
from pathlib import Path

from odin.harness import ExperimentConfig, run_experiment

CONFIGS = Path(__file__).resolve().parent / "configs"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="config stems to run (default: all but smoke)")
    args = ap.parse_args(argv)

    paths = sorted(CONFIGS.glob("*.json"))
    if args.only:
        paths = [p for p in paths if p.stem in args.only]
    else:
        paths = [p for p in paths if p.stem != "smoke"]

    ok = True
    for path in paths:
        cfg = ExperimentConfig.from_dict({**json.loads(path.read_text()), "threads": args.threads})
        t0 = time.perf_counter()
        rep = run_experiment(cfg, args.out / path.stem)
        ok &= rep.ok
        print(f"{path.stem}: {'complete' if rep.ok else 'INCOMPLETE'} in {time.perf_counter() - t0:.0f} s -> {args.out / path.stem}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
