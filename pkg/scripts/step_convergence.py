"""Measure the integrator's convergence order by step halving.

Runs the narrow zero-temperature Brownian setup (one pseudomode) both
without noise and along one noise realization, and prints the observed
order ``log2(|y_h - y_{h/2}| / |y_{h/2} - y_{h/4}|)`` for successive steps.
The noisy run only reaches the asymptotic regime once ``h`` resolves the
highest noise frequency ``N_xi pi / T``.
"""

import argparse
import math

import numpy as np

from stochmode.dynamics import DriveSpec, SystemSpec, integrate, thermal_init
from stochmode.noise import sample_field
from stochmode.qcore import sigma_x, sigma_z
from stochmode.scenarios import build_stochastic, default_config


def orders(sysd, pm, drive, rho0, grid, steps):
    sz = [integrate(sysd, pm, drive, rho0, grid, h=h).observables["sz"] for h in steps]
    err = [float(np.max(np.abs(a - b))) for a, b in zip(sz, sz[1:])]
    return err, [math.log2(a / b) for a, b in zip(err, err[1:])]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--steps", type=float, nargs="+", default=[0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125])
    args = p.parse_args(argv)

    cfg = default_config("brownian_T0_narrow")
    pm, models, _ = build_stochastic(cfg)
    sysd = SystemSpec(0.5 * sigma_z(), (sigma_x(),), {"sz": sigma_z()})
    rho0 = thermal_init(pm, rho_s=np.diag([1.0, 0.0]))
    grid = np.linspace(0, cfg.horizon, 51)
    noisy = DriveSpec((sample_field(models[0], cfg.ensemble.seed, (0, 0)),))
    top = models[0].N_xi * math.pi / models[0].T
    print(f"highest noise frequency {top:.1f}")
    for label, drive in (("no noise", None), ("noise", noisy)):
        err, order = orders(sysd, pm, drive, rho0, grid, args.steps)
        print(label)
        for h, e, o in zip(args.steps[1:], err[1:], order):
            print(f"  h={h:<9g} h*w_max={h * top:6.2f} diff={e:.3e} order={o:.2f}")


if __name__ == "__main__":
    main()
