"""Run built-in scenarios and write one result directory per scenario.

    python3 scripts/run_scenarios.py                     # all, full defaults
    python3 scripts/run_scenarios.py --quick             # short smoke run
    python3 scripts/run_scenarios.py brownian_finiteT --set ensemble.N_stoch=200
"""

import argparse
import json
import sys
import time
import warnings
from pathlib import Path

from stochmode.scenarios import SCENARIOS, run_scenario, write_bundle

QUICK = ["horizon=2", "ensemble.N_stoch=8", "ensemble.batch_size=4", "ensemble.dt_out=0.5", "noise.N_xi=50"]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("ids", nargs="*", help=f"scenario ids (default: all of {', '.join(SCENARIOS)})")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--quick", action="store_true", help="tiny horizon and ensemble")
    p.add_argument("--out", default="stochmode_out", help="parent output directory")
    args = p.parse_args(argv)
    if args.quick:
        # tiny runs use small truncations on purpose
        warnings.filterwarnings("ignore", "top Fock level")

    for sid in args.ids or list(SCENARIOS):
        overrides = (QUICK if args.quick else []) + args.set
        if args.quick and sid == "three_baths":
            overrides.append("N_stoch_small=4")
        t0 = time.perf_counter()
        bundle = run_scenario(sid, overrides)
        out = write_bundle(bundle, Path(args.out) / sid)
        metrics = {k: v for k, v in bundle.metrics.items() if not isinstance(v, dict)}
        for k in ("comparator", "fit"):
            if k in bundle.metrics:
                metrics[k] = {kk: vv for kk, vv in bundle.metrics[k].items() if not isinstance(vv, list)}
        print(f"{sid}: {time.perf_counter() - t0:.1f} s -> {out}")
        print("  " + json.dumps(metrics, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
