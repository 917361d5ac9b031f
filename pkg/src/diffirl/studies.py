"""Seeded end-to-end studies shared by the experiment scripts and the acceptance tests.

Each study trains one policy per seed and compares its EMA parameters with
the deterministic baseline sampler on fresh evaluation rollouts.
"""

from __future__ import annotations

import logging

import numpy as np

from .config import ExperimentConfig
from .experiment import Experiment
from .learner import train
from .metrics import class_histogram, class_tv, energy_distance, mean_nfe

log = logging.getLogger(__name__)


def ring_improvement(cfg: ExperimentConfig, n_eval: int = 10_000) -> dict:
    """Energy distance to expert samples: learned EMA policy vs the baseline sampler."""
    exp = Experiment.from_config(cfg)
    expert = exp.eval_expert_samples(n_eval, key="eval")
    res = train(cfg)
    base = energy_distance(exp.generate(exp.baseline_policy(), n_eval, key=("eval", "baseline")).final_x, expert)
    learned = energy_distance(exp.generate(res.ema_policy, n_eval, key=("eval", "learned")).final_x, expert)
    return {"seed": cfg.run.seed, "baseline_ed": base, "learned_ed": learned, "ratio": learned / base}


def class_study(cfg: ExperimentConfig, betas=(0.5, 1.0, 2.0), n_eval: int = 10_000, n_nfe: int = 1000) -> dict:
    """Class histograms and NFE of the learned policy across sampling temperatures.

    The class histogram uses ``n_eval`` samples, mean NFE uses the first
    ``n_nfe`` trajectories of the same batch.
    """
    exp = Experiment.from_config(cfg)
    res = train(cfg)
    w = exp.target.weights
    base = exp.generate(exp.baseline_policy(), n_eval, key=("eval", "baseline"))
    hb = class_histogram(exp.target, base.final_x)
    out = {"seed": cfg.run.seed, "baseline_hist": hb, "baseline_tv": class_tv(hb, w), "baseline_nfe": mean_nfe(base), "beta": {}}
    for beta in betas:
        b = exp.generate(res.ema_policy, n_eval, beta, key=("eval", repr(float(beta))))
        h = class_histogram(exp.target, b.final_x)
        out["beta"][beta] = {"hist": h, "tv": class_tv(h, w), "nfe": float(np.mean(b.total_nfe[:n_nfe]))}
    return out


def over_seeds(study, cfg: ExperimentConfig, seeds, **kw) -> list[dict]:
    rows = []
    for s in seeds:
        rows.append(study(cfg.replace(run={"seed": s}), **kw))
        log.info("seed %d done", s)
    return rows


def median(rows, get) -> float:
    return float(np.median([get(r) for r in rows]))
