"""Check that the ensemble's standard error falls as N^(-1/2).

Runs the narrow zero-temperature Brownian setup on a short horizon for a
sequence of ensemble sizes and fits the log-log slope of the mean reported
spread of <sigma_z>.
"""

import argparse

import numpy as np

from stochmode.dynamics import SystemSpec, thermal_init
from stochmode.ensemble import EnsembleConfig, run_ensemble
from stochmode.qcore import sigma_x, sigma_z
from stochmode.scenarios import build_stochastic, default_config


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 1024, 4096])
    p.add_argument("--horizon", type=float, default=10.0)
    p.add_argument("--workers", type=int, default=1)
    args = p.parse_args(argv)

    cfg = default_config("brownian_T0_narrow")
    cfg.horizon = args.horizon
    cfg.noise.N_xi = 400
    pm, models, _ = build_stochastic(cfg)
    sysd = SystemSpec(0.5 * sigma_z(), (sigma_x(),), {"sz": sigma_z()})
    rho0 = thermal_init(pm, rho_s=np.diag([1.0, 0.0]))
    grid = tuple(np.linspace(0, args.horizon, 21))
    spreads = []
    for N in args.sizes:
        ec = EnsembleConfig(N_stoch=N, global_seed=11, grid=grid, observables=("sz",), batch_size=128,
                            workers=args.workers)
        s = float(np.mean(run_ensemble(sysd, pm, models, rho0, ec).std["sz"][1:]))
        spreads.append(s)
        print(f"N={N:<6d} mean std {s:.3e}")
    slope = np.polyfit(np.log(args.sizes), np.log(spreads), 1)[0]
    print(f"log-log slope {slope:.3f} (expected -0.5)")


if __name__ == "__main__":
    main()
