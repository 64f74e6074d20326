"""Tracking error ratio ||x_T - x*|| / ||x_200 - x*|| against T on the converging market.

With alpha_t = 1/t and the mirror step x - (alpha/2) g, the error of the
primal iterate behaves like a t^{-1/2} - b/t, so the ratio approaches
sqrt(200/T) from above.  The table compares the measured ratio with that
reference for several horizons and both initialisations.
"""
import numpy as np

from online_gne.experiment import build, load_config, preset_path, run_seed
from online_gne.game import closed_form_gne_profile
from online_gne.metrics import tracking_error

for init in ("random", "zero"):
    cfg = load_config(preset_path("converging-tracking"), horizon=80000)
    cfg.init = init
    b = build(cfg)
    log = run_seed(cfg, b, 0)
    err = tracking_error(log, b.game.limit_game(), gne=closed_form_gne_profile(20, None))
    for T in (5000, 20000, 40000, 80000):
        print(f"init={init:6} T={T:6d}: ratio={err[T - 1] / err[199]:.4f}  "
              f"sqrt(200/T)={np.sqrt(200 / T):.4f}")
