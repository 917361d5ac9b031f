"""Class-distribution control and the temperature sweep with a renoise policy.

The model denoiser is biased toward 50/50 classes; the expert is 80/20.
Reports class TV to the expert weights and mean NFE at each temperature.

    python scripts/class_shift.py --seeds 0,1,2,3,4
"""

import argparse
import logging
from pathlib import Path

from diffirl import config
from diffirl.studies import class_study, median, over_seeds

HERE = Path(__file__).parent

p = argparse.ArgumentParser()
p.add_argument("--config", default=HERE / "configs" / "class_shift_renoise.ini")
p.add_argument("--seeds", default="0,1,2,3,4")
p.add_argument("--betas", default="0.5,1,2")
args = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

betas = tuple(float(b) for b in args.betas.split(","))
rows = over_seeds(class_study, config.load(args.config), [int(s) for s in args.seeds.split(",")], betas=betas)
for r in rows:
    parts = [f"seed {r['seed']}: baseline tv {r['baseline_tv']:.3f}"]
    parts += [f"beta {b:g}: tv {v['tv']:.3f} nfe {v['nfe']:.2f}" for b, v in r["beta"].items()]
    print("  ".join(parts))

reduction = median(rows, lambda r: 1 - r["beta"][1.0]["tv"] / r["baseline_tv"]) if 1.0 in betas else float("nan")
print(f"median class-TV reduction at beta=1: {100 * reduction:.0f}%")
for b in betas:
    print(f"median NFE at beta={b:g}: {median(rows, lambda r: r['beta'][b]['nfe']):.2f}")
