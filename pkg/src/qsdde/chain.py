"""The discrete parameter chain.

Two simulators live here.  ``run_dqn`` is the idealized-replay noisy
iteration that the delay diffusion approximates,

    theta_{n+1} = theta_n - eta * b_n(theta_n, theta_{floor(n/m) m})
                  + eta * V(s,a) * xi * grad Q   (reward noise)
                  + sqrt(eta * delta) * W        (exploration noise)

with the target argument frozen at the last multiple of m steps; the two
noise pieces are exactly the split of the sampled-reward update, so the
increment is identical in law to the raw update that uses r ~ N(R, V^2)
directly.  ``run_algorithm1`` is the fully faithful loop: epsilon-greedy
actions, an online FIFO buffer, uniform minibatch sampling (H = 1), and the
same injected exploration noise.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mdp import MdpSpec, OnlineBufferReplay, sample_transition, IdealizedReplay
from .qnet import QNetSpec, q_values_batch
from .rng import TrajectoryStreams, block_size

H_MINIBATCH = 1  # single-sample minibatches throughout


class ChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class AlgoConfig:
    """Step size, noise temperature, target period and horizon of a run."""

    eta: float
    delta: float
    m: int
    T: int
    seed: int = 0
    H: int = H_MINIBATCH

    def __post_init__(self):
        # eta = 0 is admitted as the degenerate identity step
        if not (self.eta >= 0.0):
            raise ValueError("eta must be nonnegative")
        if not (self.delta > 0.0):
            raise ValueError("delta must be positive")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.H != H_MINIBATCH:
            raise ValueError("minibatch size is fixed to 1")


@dataclass
class TrajectoryEnsemble:
    """Checkpoint slices of independent trajectories.

    samples has shape (n_traj, n_checkpoints, d); checkpoints are strictly
    increasing step indices (chain) or integer multiples of eta (delay SDE).
    """

    checkpoints: tuple[int, ...]
    samples: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.checkpoints, self.checkpoints[1:])):
            raise ValueError("checkpoint indices must be strictly increasing")

    @property
    def n_traj(self) -> int:
        return self.samples.shape[0]

    def at(self, checkpoint: int) -> np.ndarray:
        """(n_traj, d) slice at the requested checkpoint index."""
        return self.samples[:, self.checkpoints.index(checkpoint), :]


def chain_increment(net: QNetSpec, spec: MdpSpec, theta: np.ndarray,
                    target: np.ndarray, s, a, s_next, r, W, eta: float,
                    delta: float) -> np.ndarray:
    """Shared update kernel, batched over trajectories.

    theta, target: (N, d); s, a, s_next: (N,) int; r: (N,) sampled rewards;
    W: (N, d) standard normals.  Returns theta_next (N, d).
    """
    n = theta.shape[0]
    enc_rows = np.zeros((n, 1, net.input_dim))
    enc_rows[np.arange(n), 0, s] = 1.0
    enc_rows[np.arange(n), 0, net.n_states + a] = 1.0
    Qx, g = q_values_batch(net, theta, enc_rows, with_grad=True)
    Qx, g = Qx[:, 0], g[:, 0, :]
    # max_a Q(s', a; target): all-action heads at each trajectory's s'
    act_rows = np.zeros((n, net.n_actions, net.input_dim))
    act_rows[np.arange(n)[:, None], np.arange(net.n_actions)[None, :],
             np.asarray(s_next)[:, None]] = 1.0
    act_rows[:, np.arange(net.n_actions), net.n_states + np.arange(net.n_actions)] = 1.0
    maxq = q_values_batch(net, target, act_rows).max(axis=1)
    bracket = r + spec.gamma * maxq - Qx
    return theta + eta * bracket[:, None] * g + np.sqrt(eta * delta) * W


def dqn_step(net: QNetSpec, spec: MdpSpec, q: np.ndarray, theta: np.ndarray,
             theta_target: np.ndarray, cfg: AlgoConfig,
             rng: np.random.Generator) -> np.ndarray:
    """One noisy update from theta with a frozen target parameter.

    Draws one transition (its Gaussian reward carries the reward noise
    V*xi routed along grad Q) and one standard Gaussian W in R^d.
    """
    t = sample_transition(spec, IdealizedReplay(q), rng)
    W = rng.standard_normal(net.d)
    out = chain_increment(net, spec, theta[None, :], theta_target[None, :],
                          np.array([t.s]), np.array([t.a]), np.array([t.s_next]),
                          np.array([t.r]), W[None, :], cfg.eta, cfg.delta)[0]
    if not np.all(np.isfinite(out)):
        raise ChainError(f"non-finite parameter after dqn_step from |theta|="
                         f"{np.linalg.norm(theta):.3e}, transition {t}")
    return out


def _sample_pairs_batch(spec: MdpSpec, q_flat_cum: np.ndarray, p_cum: np.ndarray,
                        u1: np.ndarray, u2: np.ndarray, n_actions: int):
    """Vectorised (s, a) ~ q then s' ~ p(.|s,a) from uniforms."""
    k = np.searchsorted(q_flat_cum, u1 * q_flat_cum[-1], side="right")
    k = np.minimum(k, q_flat_cum.shape[0] - 1)
    rows = p_cum[k]  # (N, S)
    sp = (u2[:, None] * rows[:, -1:] > rows).sum(axis=1)
    sp = np.minimum(sp, rows.shape[1] - 1)
    s, a = k // n_actions, k % n_actions
    return s, a, sp, k


def run_dqn(net: QNetSpec, spec: MdpSpec, q: np.ndarray, theta0: np.ndarray,
            cfg: AlgoConfig, n_traj: int, checkpoints: Sequence[int],
            stream_path: tuple[int, ...] = (0,)) -> TrajectoryEnsemble:
    """Simulate n_traj independent chains, recording checkpoint slices.

    The target parameter is frozen at theta_{floor(n/m) m} within each window
    of m steps (refreshed at the pre-step index).  Each trajectory owns a
    counter-based stream keyed by (cfg.seed, *stream_path, trajectory index).
    """
    checkpoints = tuple(int(c) for c in checkpoints)
    if any(c < 0 or c > cfg.T for c in checkpoints):
        raise ValueError("checkpoints must lie in [0, T]")
    d = net.d
    theta0 = np.asarray(theta0, dtype=np.float64)
    if theta0.ndim == 1:
        theta = np.repeat(theta0[None, :], n_traj, axis=0)
    else:  # one initial condition per trajectory
        theta = theta0.copy()
        if theta.shape != (n_traj, d):
            raise ValueError(f"theta0 must have shape ({n_traj}, {d})")
    target = theta.copy()
    # one stream per kind so blocking never changes which word feeds which step
    streams_u = TrajectoryStreams(cfg.seed, (*stream_path, 0), n_traj)
    streams_z = TrajectoryStreams(cfg.seed, (*stream_path, 1), n_traj)
    q_cum = np.cumsum(np.asarray(q, dtype=np.float64).reshape(-1))
    p_cum = np.cumsum(spec.p.reshape(-1, spec.n_states), axis=1)
    R_flat = spec.R.reshape(-1)
    V_flat = spec.V.reshape(-1)
    out = np.empty((n_traj, len(checkpoints), d))
    ck_pos = {c: i for i, c in enumerate(checkpoints)}
    if 0 in ck_pos:
        out[:, ck_pos[0], :] = theta
    blk = block_size(n_traj, 3 + d)
    u_block = z_block = None
    for n in range(cfg.T):
        if n % cfg.m == 0:
            target = theta.copy()
        j = n % blk
        if j == 0:
            nb = min(blk, cfg.T - n)
            u_block = streams_u.uniform_block(2 * nb).reshape(n_traj, nb, 2)
            z_block = streams_z.normal_block((1 + d) * nb).reshape(n_traj, nb, 1 + d)
        s, a, sp, k = _sample_pairs_batch(spec, q_cum, p_cum, u_block[:, j, 0],
                                          u_block[:, j, 1], spec.n_actions)
        xi = z_block[:, j, 0]
        W = z_block[:, j, 1:]
        r = R_flat[k] + V_flat[k] * xi
        theta = chain_increment(net, spec, theta, target, s, a, sp, r, W,
                                cfg.eta, cfg.delta)
        if not np.all(np.isfinite(theta)):
            bad = int(np.argwhere(~np.isfinite(theta).all(axis=1))[0, 0])
            raise ChainError(f"non-finite parameter at step {n + 1}, trajectory {bad}")
        if (n + 1) in ck_pos:
            out[:, ck_pos[n + 1], :] = theta
    meta = {"kind": "dqn_chain", "cfg": cfg, "theta0": np.asarray(theta0).copy(),
            "stream_path": stream_path, "n_traj": n_traj}
    return TrajectoryEnsemble(checkpoints=checkpoints, samples=out, meta=meta)


def run_algorithm1(net: QNetSpec, spec: MdpSpec, replay: OnlineBufferReplay,
                   cfg: AlgoConfig, n_traj: int, checkpoints: Sequence[int],
                   theta0: np.ndarray, s0: int = 0,
                   master_seed: int | None = None) -> TrajectoryEnsemble:
    """Faithful experience-replay loop with an online FIFO buffer.

    Per step: epsilon-greedy action at the current state, environment step,
    buffer store, uniform minibatch of size 1, gradient step with the sampled
    reward, injected sqrt(eta*delta) W noise, target sync every m steps.  The
    first step stores before sampling, so the buffer is never empty.
    """
    checkpoints = tuple(int(c) for c in checkpoints)
    if any(c < 0 or c > cfg.T for c in checkpoints):
        raise ValueError("checkpoints must lie in [0, T]")
    if master_seed is None:
        master_seed = cfg.seed
    d = net.d
    out = np.empty((n_traj, len(checkpoints), d))
    ck_pos = {c: i for i, c in enumerate(checkpoints)}
    enc = net.encode_all_pairs()
    A = net.n_actions
    action_counts = np.zeros((n_traj, A), dtype=np.int64)
    for i in range(n_traj):
        gen = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(entropy=master_seed, spawn_key=(1, i))))
        theta = np.asarray(theta0, dtype=np.float64).copy()
        target = theta.copy()
        buffer: deque = deque(maxlen=replay.capacity)
        state = s0
        if 0 in ck_pos:
            out[i, ck_pos[0], :] = theta
        for n in range(cfg.T):
            if n % cfg.m == 0:
                target = theta.copy()
            if gen.uniform() < replay.epsilon:
                action = int(gen.integers(A))
            else:
                qvals = q_values_batch(net, theta[None, :], enc[state * A:(state + 1) * A])
                action = int(np.argmax(qvals[0]))
            action_counts[i, action] += 1
            cp = np.cumsum(spec.p[state, action])
            s_next = min(int(np.searchsorted(cp, gen.uniform() * cp[-1], side="right")),
                         spec.n_states - 1)
            r = spec.R[state, action] + spec.V[state, action] * gen.standard_normal()
            buffer.append((state, action, float(r), s_next))
            j = int(gen.integers(len(buffer)))
            bs, ba, br, bsp = buffer[j]
            W = gen.standard_normal(d)
            theta = chain_increment(net, spec, theta[None, :], target[None, :],
                                    np.array([bs]), np.array([ba]), np.array([bsp]),
                                    np.array([br]), W[None, :], cfg.eta, cfg.delta)[0]
            if not np.all(np.isfinite(theta)):
                raise ChainError(f"non-finite parameter at step {n + 1}, trajectory {i}")
            state = s_next
            if (n + 1) in ck_pos:
                out[i, ck_pos[n + 1], :] = theta
    meta = {"kind": "algorithm1", "cfg": cfg, "theta0": np.asarray(theta0).copy(),
            "replay": replay, "n_traj": n_traj, "s0": s0,
            "action_counts": action_counts}
    return TrajectoryEnsemble(checkpoints=checkpoints, samples=out, meta=meta)


@dataclass
class ThetaMomentReport:
    """Fourth-moment growth of the chain against (1 + |x|^4 + E|theta_0|^4)."""

    checkpoints: tuple[int, ...]
    fourth_moments: np.ndarray
    envelope: float
    c_fit: float
    all_finite: bool

    def as_dict(self) -> dict:
        return {"checkpoints": list(self.checkpoints),
                "fourth_moments": self.fourth_moments.tolist(),
                "envelope": self.envelope, "c_fit": self.c_fit,
                "all_finite": self.all_finite}


def moment_check_theta(ensemble: TrajectoryEnsemble) -> ThetaMomentReport:
    """Empirical E|theta_n|^4 at each checkpoint and the fitted constant."""
    if ensemble.samples.size == 0:
        raise ValueError("empty ensemble")
    norms4 = (ensemble.samples ** 2).sum(axis=2) ** 2  # (n_traj, C)
    moments = norms4.mean(axis=0)
    x = ensemble.meta.get("theta0")
    if x is None:
        x4 = 0.0
    else:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        x4 = float(((x ** 2).sum(axis=1) ** 2).mean())
    envelope = 1.0 + 2.0 * x4  # deterministic start: E|theta_0|^4 = |x|^4
    return ThetaMomentReport(
        checkpoints=ensemble.checkpoints,
        fourth_moments=moments,
        envelope=envelope,
        c_fit=float(moments.max() / envelope),
        all_finite=bool(np.all(np.isfinite(moments))),
    )
