"""Policy and discriminator snapshots as JSON text.

Floats are written with ``repr`` precision by the json module, so a
save/load round trip restores parameters bit for bit.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .nn import MLP
from .policy import SigmaOnlyPolicy, StateDependentPolicy
from .ratio import Discriminator

FORMAT_VERSION = 1


class SnapshotError(ValueError):
    pass


def schedule_hash(sigmas) -> str:
    text = ",".join(repr(float(s)) for s in np.asarray(sigmas, float))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _mlp_dict(net: MLP) -> dict:
    return {"sizes": list(net.sizes), "params": net.get_flat().tolist()}


def _mlp_from(d: dict) -> MLP:
    sizes = list(d["sizes"])
    net = MLP.__new__(MLP)
    net.sizes = sizes
    net.weights = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    net.biases = [np.zeros(b) for b in sizes[1:]]
    net.set_flat(np.asarray(d["params"], dtype=float))
    return net


def policy_to_dict(policy, env=None, config_text: str | None = None, extra: dict | None = None) -> dict:
    d = {"format": FORMAT_VERSION, "kind": "policy", "family": policy.family, "stationary": policy.stationary}
    if isinstance(policy, SigmaOnlyPolicy):
        d["table_shape"] = list(policy.table.shape)
        d["params"] = policy.params.tolist()
    else:
        d.update(net=_mlp_dict(policy.net), data_std=policy.data_std, horizon=policy.horizon)
    if env is not None:
        d.update(
            strategy=env.strategy.value,
            gamma_grid=env.gamma_grid.tolist(),
            omega_grid=env.omega_grid.tolist(),
            M=env.M,
            horizon_T=env.horizon,
            sigmas=env.schedule.sigmas.tolist(),
            schedule_hash=schedule_hash(env.schedule.sigmas),
        )
    if config_text is not None:
        d["config"] = config_text
    if extra:
        d.update(extra)
    return d


def policy_from_dict(d: dict):
    if d.get("kind") != "policy":
        raise SnapshotError("not a policy snapshot")
    if d["family"] == "sigma_only":
        table = np.asarray(d["params"], dtype=float).reshape(d["table_shape"])
        return SigmaOnlyPolicy(table, d["stationary"])
    if d["family"] == "state_dependent":
        return StateDependentPolicy(_mlp_from(d["net"]), d["data_std"], d["horizon"], d["stationary"])
    raise SnapshotError(f"unknown policy family {d['family']!r}")


def check_compatible(d: dict, env) -> None:
    """Reject a snapshot whose strategy, grid or schedule differ from ``env``."""
    if "strategy" not in d:
        return
    problems = []
    if d["strategy"] != env.strategy.value:
        problems.append(f"strategy {d['strategy']} vs {env.strategy.value}")
    if d["schedule_hash"] != schedule_hash(env.schedule.sigmas):
        problems.append("noise schedule differs")
    if d["strategy"] == "gamma" and d["gamma_grid"] != env.gamma_grid.tolist():
        problems.append("gamma grid differs")
    if d["strategy"] == "guidance" and d["omega_grid"] != env.omega_grid.tolist():
        problems.append("omega grid differs")
    if d["strategy"] == "renoise" and d["M"] != env.M:
        problems.append("M differs")
    if problems:
        raise SnapshotError("snapshot does not match the environment: " + "; ".join(problems))


def discriminator_to_dict(disc: Discriminator) -> dict:
    return {
        "format": FORMAT_VERSION,
        "kind": "discriminator",
        "net": _mlp_dict(disc.net),
        "data_std": disc.data_std,
        "sigmas": disc.sigmas.tolist(),
        "schedule_hash": schedule_hash(disc.sigmas),
        "clamp": list(disc.clamp),
    }


def discriminator_from_dict(d: dict) -> Discriminator:
    if d.get("kind") != "discriminator":
        raise SnapshotError("not a discriminator snapshot")
    return Discriminator(_mlp_from(d["net"]), d["data_std"], np.asarray(d["sigmas"], float), tuple(d["clamp"]))


def dumps(d: dict) -> str:
    return json.dumps(d, indent=1, sort_keys=True) + "\n"


def save(path, d: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(d))


def load_dict(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as e:
            raise SnapshotError(f"{path}:{e.lineno}: malformed snapshot ({e.msg})") from None
    if d.get("format") != FORMAT_VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot format {d.get('format')!r}")
    return d


def load_policy(path):
    d = load_dict(path)
    return policy_from_dict(d), d


def load_discriminator(path) -> Discriminator:
    return discriminator_from_dict(load_dict(path))
