"""Log-log fit quality of max_i Reg_i(T) on the oscillating market.

Sweeps initialisation and seed to show how much of the regret curve is the
initial transient: with random starts the curve is nearly flat after a few
hundred rounds, so the r^2 of a power-law fit mostly measures oscillation.
"""
import argparse

import numpy as np

from online_gne.experiment import build, load_config, preset_path, run_seed
from online_gne.metrics import regret_all, sublinearity_fit

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--seeds", type=int, default=3)
ap.add_argument("--step", type=int, default=100)
args = ap.parse_args()

H = np.arange(args.step, 5001, args.step)
for init in ("random", "zero"):
    cfg = load_config(preset_path("oscillating-full"))
    cfg.init = init
    b = build(cfg)
    for seed in range(args.seeds if init == "random" else 1):
        log = run_seed(cfg, b, seed)
        mx = np.max([r.regret for r in regret_all(log, b.game, H)], axis=0)
        fit = sublinearity_fit(H, mx, window=(1000, 5000))
        print(f"init={init:6} seed={seed}: Reg(1000)={mx[H == 1000][0]:9.1f} "
              f"Reg(5000)={mx[-1]:9.1f} slope={fit.slope:+.3f} r2={fit.r2:.3f}")
