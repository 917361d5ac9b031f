"""Command-line entry point.

    diffirl train --config run.ini --out runs/a [--seed 3] [--workers 4]
    diffirl sample --policy runs/a/policy_ema.json --n 10000 [--beta 1]
    diffirl eval --policy runs/a/policy_ema.json --config run.ini
    diffirl gradcheck [--cases 20]
    diffirl sweep-temp --policy runs/a/policy_ema.json --betas 0.5,1,2
    diffirl oracle-check

Exit codes: 0 success, 1 invalid input, 2 failed verification.
Set DIFFIRL_VERBOSITY to quiet, info or debug to control logging.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import snapshot
from .experiment import Experiment
from .metrics import MetricReport, evaluate, reports_to_csv
from .target import class_posterior

EXIT_OK, EXIT_INVALID, EXIT_VERIFY = 0, 1, 2

log = logging.getLogger("diffirl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _betas(text: str) -> list[float]:
    try:
        vals = [float(b) for b in text.split(",") if b.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not vals or any(b <= 0 for b in vals):
        raise argparse.ArgumentTypeError("temperatures must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffirl", description=__doc__.split("\n\n")[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a sampling policy")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--timing", action="store_true", help="record wall-clock time in the metrics CSV")
    t.add_argument("--eval", action="store_true", help="evaluate the EMA policy after training")

    s = sub.add_parser("sample", help="generate samples with a trained policy")
    s.add_argument("--policy", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--beta", type=float, default=1.0)
    s.add_argument("--config", help="override the configuration stored in the snapshot")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="samples CSV path (default: stdout report only)")

    e = sub.add_parser("eval", help="recompute metrics for a trained policy")
    e.add_argument("--policy", required=True)
    e.add_argument("--config", required=True)
    e.add_argument("--n", type=int)
    e.add_argument("--beta", type=float, default=1.0)

    g = sub.add_parser("gradcheck", help="tabular gradient oracle suite")
    g.add_argument("--cases", type=int, default=20)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol", type=float, default=1e-6)

    w = sub.add_parser("sweep-temp", help="metrics across sampling temperatures")
    w.add_argument("--policy", required=True)
    w.add_argument("--betas", type=_betas, required=True)
    w.add_argument("--n", type=int, default=1000)
    w.add_argument("--config")
    w.add_argument("--out")

    o = sub.add_parser("oracle-check", help="sampler, decomposition and ratio-estimator oracles")
    o.add_argument("--skip-ratio", action="store_true")
    return p


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("DIFFIRL_VERBOSITY", "info").lower(), logging.INFO
    )
    logging.basicConfig(level=level, format="%(message)s", stream=sys.stderr)


def _experiment_for(policy_path: str, config_path: str | None, seed: int | None = None):
    policy, meta = snapshot.load_policy(policy_path)
    if config_path is not None:
        cfg = cfgmod.load(config_path)
    elif "config" in meta:
        cfg = cfgmod.parse(meta["config"], source=f"{policy_path} (embedded config)")
    else:
        raise cfgmod.ConfigError("snapshot carries no configuration; pass --config", source=policy_path)
    if seed is not None:
        cfg.run.seed = seed
    exp = Experiment.from_config(cfg)
    snapshot.check_compatible(meta, exp.env)
    return exp, policy


def _report(exp: Experiment, policy, n: int, beta: float, key="eval"):
    batch = exp.generate(policy, n, beta, key=(key, repr(float(beta))))
    expert = exp.eval_expert_samples(n, key="eval")
    return batch, evaluate(batch, exp.target, expert)


def cmd_train(args) -> int:
    from .learner import train

    cfg = cfgmod.load(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train(cfg, workers=args.workers, record_wall_time=args.timing, progress=lambda r: log.info(
        "epoch %d  D=%.4f  nfe=%.2f  w0=%.3f  ed=%.4f", r["epoch"], r["divergence_estimate"], r["mean_nfe"], r["w_theta_terminal"], r["energy_distance"]
    ))
    text = cfgmod.emit(cfg)
    (out / "config.ini").write_text(text)
    (out / "metrics.csv").write_text(result.metrics_csv())
    snapshot.save(out / "policy.json", snapshot.policy_to_dict(result.policy, result.env, text))
    snapshot.save(out / "policy_ema.json", snapshot.policy_to_dict(result.ema_policy, result.env, text))
    snapshot.save(out / "discriminator.json", snapshot.discriminator_to_dict(result.discriminator))
    if args.eval:
        exp = Experiment.from_config(cfg)
        _, rep = _report(exp, result.ema_policy, cfg.run.n_eval, 1.0)
        (out / "report.txt").write_text(rep.to_text())
        print(rep.to_text(), end="")
    log.info("wrote %s", out)
    return EXIT_OK


def cmd_sample(args) -> int:
    if args.n < 1:
        raise ValueError("--n must be at least 1")
    exp, policy = _experiment_for(args.policy, args.config, args.seed)
    batch, rep = _report(exp, policy, args.n, args.beta, key="sample")
    if args.out:
        X = batch.final_x
        post = class_posterior(exp.target, X, 0.0)
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{j}" for j in range(X.shape[1])] + [f"p_class{k}" for k in range(post.shape[1])])
            for row in np.hstack([X, post]):
                w.writerow([repr(float(v)) for v in row])
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    exp, policy = _experiment_for(args.policy, args.config)
    n = args.n or exp.cfg.run.n_eval
    _, rep = _report(exp, policy, n, args.beta)
    print(rep.to_text(), end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    exp, policy = _experiment_for(args.policy, args.config)
    reports: list[MetricReport] = [_report(exp, policy, args.n, b, key="sweep")[1] for b in args.betas]
    text = reports_to_csv(reports, {"beta": [repr(b) for b in args.betas]})
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def _run_checks(checks) -> int:
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_VERIFY


def cmd_gradcheck(args) -> int:
    from .verify import gradcheck

    if args.cases < 1:
        raise ValueError("--cases must be at least 1")
    return _run_checks(gradcheck(args.cases, args.seed, args.tol))


def cmd_oracle(args) -> int:
    from .verify import oracle_check

    return _run_checks(oracle_check(with_ratio=not args.skip_ratio))


COMMANDS = {
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "sweep-temp": cmd_sweep,
    "oracle-check": cmd_oracle,
}


def run(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    except (cfgmod.ConfigError, snapshot.SnapshotError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
