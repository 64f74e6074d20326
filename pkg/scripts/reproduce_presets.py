"""Run every bundled preset and write its logs, manifest and reports under runs/."""
import argparse
import time

from online_gne.experiment import execute, list_presets, load_config, preset_path

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--only", nargs="*", help="subset of preset names")
ap.add_argument("--horizon", type=int, help="shorter horizon for a quick look")
ap.add_argument("--out-root", default="runs")
args = ap.parse_args()

for name in args.only or list_presets():
    cfg = load_config(preset_path(name), horizon=args.horizon, out=f"{args.out_root}/{name}")
    t0 = time.perf_counter()
    summary = execute(cfg)
    print(f"{name:>14}: {time.perf_counter() - t0:6.1f}s  "
          f"max Reg/T={summary['mean_final_max_regret_avg']:.4g}  "
          f"R_g/T={summary['mean_final_violation_avg']:.4g}  -> {cfg.out}")
