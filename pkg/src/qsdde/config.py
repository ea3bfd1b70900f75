"""Experiment configuration: JSON loading, defaults, validation.

A config document bundles the MDP, the network architecture, the algorithm
parameters and per-study blocks.  Loading fills defaults, checks every
module-level invariant and aggregates all violations into one error; in
strict-gate mode the step-size admissibility check is enforced at load
time, downgraded to a warning under force.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import AlgoConfig
from .coeffs import estimate_constants, step_size_gate
from .mdp import (IdealizedReplay, MdpSpec, ReplayModel, load_mdp, uniform_q,
                  validate_mdp)
from .qnet import QNetSpec
from .rng import spawn_generator
from .sdde import SddeConfig

_GATE_PATH = (9, 0)

DEFAULTS = {
    "seed": 0,
    "strict_gate": False,
    "net": {"hidden": [8], "bound_C": 10.0, "init": {"dist": "normal", "stddev": 0.5, "seed": 1}},
    "algo": {"eta": 0.05, "delta": 0.5, "m": 5, "T": 40, "rho": 20},
    "n_traj": 256,
}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = errors
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in errors))


@dataclass
class ExperimentConfig:
    mdp: MdpSpec
    replay: ReplayModel
    net: QNetSpec
    theta0: np.ndarray
    algo: AlgoConfig
    sdde: SddeConfig
    seed: int
    strict_gate: bool
    n_traj: int
    checkpoints: tuple[int, ...]
    raw: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def q(self) -> np.ndarray:
        if isinstance(self.replay, IdealizedReplay):
            return self.replay.q
        return uniform_q(self.mdp.n_states, self.mdp.n_actions)


def _merge_defaults(doc: dict) -> dict:
    out = json.loads(json.dumps(doc))  # deep copy, JSON-typed
    for key, val in DEFAULTS.items():
        if key not in out:
            out[key] = json.loads(json.dumps(val))
        elif isinstance(val, dict):
            for k2, v2 in val.items():
                out[key].setdefault(k2, json.loads(json.dumps(v2)))
    return out


def load_config(source: str | Path | dict, seed_override: int | None = None,
                force: bool = False) -> ExperimentConfig:
    """Load and validate a config document, aggregating every violation."""
    if isinstance(source, (str, Path)):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(
                [f"JSON parse error at line {err.lineno}, column {err.colno}: {err.msg}"]
            ) from err
    else:
        doc = source
    errors: list[str] = []
    warnings: list[str] = []
    doc = _merge_defaults(doc)
    if seed_override is not None:
        doc["seed"] = int(seed_override)

    if "mdp" not in doc:
        raise ConfigError(["config must contain an 'mdp' section"])
    try:
        spec, replay = load_mdp(doc["mdp"])
    except (ValueError, KeyError) as err:
        raise ConfigError([f"mdp section: {err}"]) from err
    report = validate_mdp(spec, replay)
    errors.extend(report.failures)

    net_doc = doc["net"]
    net = None
    try:
        net = QNetSpec(n_states=spec.n_states, n_actions=spec.n_actions,
                       hidden=tuple(net_doc["hidden"]),
                       bound=float(net_doc.get("bound_C", 10.0)))
    except ValueError as err:
        errors.append(f"net section: {err}")

    algo_doc = doc["algo"]
    algo = sdde = None
    try:
        algo = AlgoConfig(eta=float(algo_doc["eta"]), delta=float(algo_doc["delta"]),
                          m=int(algo_doc["m"]), T=int(algo_doc["T"]),
                          seed=int(doc["seed"]))
        sdde = SddeConfig(eta=algo.eta, delta=algo.delta, m=algo.m, T=algo.T,
                          rho=int(algo_doc.get("rho", 20)), seed=int(doc["seed"]))
    except (ValueError, KeyError) as err:
        errors.append(f"algo section: {err}")

    checkpoints = tuple(int(c) for c in doc.get("checkpoints", [0, doc["algo"].get("T", 1)]))
    if algo is not None and any(c < 0 or c > algo.T for c in checkpoints):
        errors.append(f"checkpoints {list(checkpoints)} must lie in [0, T={algo.T}]")

    theta0 = np.zeros(net.d if net is not None else 0)
    if net is not None:
        init = net_doc["init"]
        if init.get("dist", "normal") != "normal":
            errors.append(f"net.init.dist must be 'normal', got {init.get('dist')!r}")
        if "theta0" in net_doc:
            theta0 = np.asarray(net_doc["theta0"], dtype=np.float64)
            if theta0.shape != (net.d,):
                errors.append(f"net.theta0 must have length d = {net.d}, got {theta0.shape}")
        else:
            gen = spawn_generator(int(init.get("seed", 1)), (8, 0))
            theta0 = float(init.get("stddev", 0.5)) * gen.standard_normal(net.d)

    if doc["strict_gate"] and algo is not None and net is not None and not errors:
        if not (0.0 < algo.delta <= 1.0):
            errors.append(f"the strict gate requires 0 < delta <= 1, got {algo.delta}")
        rng = spawn_generator(int(doc["seed"]), _GATE_PATH)
        q = replay.q if isinstance(replay, IdealizedReplay) \
            else uniform_q(spec.n_states, spec.n_actions)
        est = estimate_constants(net, spec, q, algo.eta, algo.delta,
                                 n_pairs=100, radius=5.0, rng=rng)
        gate = step_size_gate(est, algo.delta)
        if not gate.passes(algo.eta):
            msg = (f"eta = {algo.eta} rejected by the step-size gate "
                   f"(eta_max = {gate.eta_max:.6g}, binding constraint: "
                   f"{gate.binding(algo.eta)})")
            if force:
                warnings.append(msg + " [forced]")
            else:
                errors.append(msg)

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(mdp=spec, replay=replay, net=net, theta0=theta0,
                            algo=algo, sdde=sdde, seed=int(doc["seed"]),
                            strict_gate=bool(doc["strict_gate"]),
                            n_traj=int(doc["n_traj"]), checkpoints=checkpoints,
                            raw=doc, warnings=warnings)
