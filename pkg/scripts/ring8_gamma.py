"""Learned gamma schedule vs the deterministic sampler on the 8-ring.

    python scripts/ring8_gamma.py --seeds 0,1,2,3,4 --out runs/ring8_gamma.csv
"""

import argparse
import csv
import logging
from pathlib import Path

from diffirl import config
from diffirl.studies import median, over_seeds, ring_improvement

HERE = Path(__file__).parent

p = argparse.ArgumentParser()
p.add_argument("--config", default=HERE / "configs" / "ring8_gamma.ini")
p.add_argument("--seeds", default="0,1,2,3,4")
p.add_argument("--n-eval", type=int, default=10_000)
p.add_argument("--out")
args = p.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = config.load(args.config)
rows = over_seeds(ring_improvement, cfg, [int(s) for s in args.seeds.split(",")], n_eval=args.n_eval)
for r in rows:
    print(f"seed {r['seed']}: baseline ED {r['baseline_ed']:.5f}  learned ED {r['learned_ed']:.5f}  ratio {r['ratio']:.3f}")
m = median(rows, lambda r: r["ratio"])
print(f"median ratio {m:.3f} (reduction {100 * (1 - m):.0f}%)")

if args.out:
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
