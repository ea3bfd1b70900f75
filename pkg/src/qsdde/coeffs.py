"""Exact drift and diffusion coefficients of the parameter dynamics.

On an enumerable MDP with idealized replay, every coefficient is an exact
finite sum over state-action heads k = (s, a):

  bbar(s,a; y)  next-state value  sum_{s'} p(s'|s,a) max_a' Q(s', a'; y)
  b(x, y)       drift             -sum_k q_k E_{s'}[c_k] grad Q_k(x)
  Sigma(x, y)   sampling cov      E[b_n b_n^T] - b b^T
  beta_bar(x)   reward-noise cov  sum_k q_k V_k^2 g_k g_k^T
  sigma(x, y)   diffusion         [Sigma + beta_bar + (delta/eta) I]^{1/2}

with the per-sample Bellman residual c_k(s') = R_k + gamma*maxQ(s'; y) - Q_k(x).
Because every per-sample drift is a scalar multiple of one of the K head
gradients, Sigma + beta_bar has rank <= K; ``sigma_factors`` exploits that to
apply the exact symmetric square root in O(d*K) per trajectory, which is what
makes large ensembles affordable.  ``sigma_matrix`` builds the dense matrices
for inspection and for the reconstruction checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import MdpSpec, Transition
from .qnet import QNetSpec, max_q_by_state, q_values_batch, max_q, q_value, q_grad

EIG_HARD_FLOOR = -1e-10  # below this a negative eigenvalue is a bug, not noise
SYM_TOL = 1e-12
_TINY = 1e-300


class CoefficientError(RuntimeError):
    """Signals a broken covariance computation (structurally negative modes)."""


def qbar(net: QNetSpec, spec: MdpSpec, y: np.ndarray, s: int, a: int) -> float:
    """Expected next-state max Q value under p(.|s,a) at target parameters y."""
    total = 0.0
    for sp in range(spec.n_states):
        w = spec.p[s, a, sp]
        if w > 0.0:
            total += w * max_q(net, y, sp)[0]
    return float(total)


def sample_drift_bn(net: QNetSpec, spec: MdpSpec, x: np.ndarray, y: np.ndarray,
                    t: Transition) -> np.ndarray:
    """Per-sample drift; uses the mean reward R(s,a), never the sampled r.

    -[R(s,a) + gamma*max_a' Q(s',a';y) - Q(s,a;x)] * grad Q(s,a;x)
    """
    bracket = (spec.R[t.s, t.a]
               + spec.gamma * max_q(net, y, t.s_next)[0]
               - q_value(net, x, t.s, t.a))
    return -bracket * q_grad(net, x, t.s, t.a)


@dataclass
class HeadStats:
    """Per-head quantities shared by all coefficient formulas.

    q_flat : (K,) sampling weights; g: (N, K, d) head gradients at x;
    Qx     : (N, K) head values at x;
    Ec, Ec2: (N, K) first and second moments of the Bellman residual over s'.
    """

    q_flat: np.ndarray
    g: np.ndarray
    Qx: np.ndarray
    Ec: np.ndarray
    Ec2: np.ndarray


def head_stats(net: QNetSpec, spec: MdpSpec, q: np.ndarray, thetas_x: np.ndarray,
               maxq_y: np.ndarray, pair_enc: np.ndarray | None = None) -> HeadStats:
    """Compute HeadStats for a batch of points x given max-Q values at y.

    thetas_x: (N, d); maxq_y: (N, S) table of max_a Q(s, a; y_n).
    """
    if pair_enc is None:
        pair_enc = net.encode_all_pairs()
    p_flat = spec.p.reshape(-1, spec.n_states)  # (K, S)
    Qx, g = q_values_batch(net, thetas_x, pair_enc, with_grad=True)
    mu1 = maxq_y @ p_flat.T  # (N, K)
    mu2 = (maxq_y ** 2) @ p_flat.T
    base = spec.R.reshape(-1)[None, :] - Qx
    Ec = base + spec.gamma * mu1
    Ec2 = base ** 2 + 2.0 * spec.gamma * base * mu1 + spec.gamma ** 2 * mu2
    return HeadStats(np.asarray(q, dtype=np.float64).reshape(-1), g, Qx, Ec, Ec2)


def drift_from_stats(stats: HeadStats) -> np.ndarray:
    """Exact drift b for each batch point, shape (N, d)."""
    w = stats.q_flat[None, :] * stats.Ec  # (N, K)
    return -(w[:, None, :] @ stats.g)[:, 0, :]


def exact_drift_b(net: QNetSpec, spec: MdpSpec, q: np.ndarray, x: np.ndarray,
                  y: np.ndarray) -> np.ndarray:
    """Exact drift b(x, y) by enumeration over the replay support."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    enc = net.encode_all_pairs()
    maxq_y = max_q_by_state(net, y, enc)
    b = drift_from_stats(head_stats(net, spec, q, x, maxq_y, enc))
    return b[0] if b.shape[0] == 1 else b


@dataclass
class CoefficientSet:
    """Dense coefficients at one point pair, with their defining identities."""

    b: np.ndarray
    Sigma: np.ndarray
    beta_bar: np.ndarray
    sigma: np.ndarray
    eta: float
    delta: float

    @property
    def target(self) -> np.ndarray:
        """The matrix sigma must square to: Sigma + beta_bar + (delta/eta) I."""
        d = self.b.shape[0]
        return self.Sigma + self.beta_bar + (self.delta / self.eta) * np.eye(d)

    def check(self, recon_tol: float = 1e-10) -> list[str]:
        """Return a list of violated invariants (empty when all hold)."""
        fails = []
        for name, m in (("Sigma", self.Sigma), ("beta_bar", self.beta_bar)):
            if np.abs(m - m.T).max() > SYM_TOL:
                fails.append(f"{name} asymmetric beyond {SYM_TOL}")
            w = np.linalg.eigvalsh(0.5 * (m + m.T))
            if w.min() < EIG_HARD_FLOOR:
                fails.append(f"{name} eigenvalue {w.min():.3e} below {EIG_HARD_FLOOR}")
        target = self.target
        err = np.linalg.norm(self.sigma @ self.sigma.T - target) / np.linalg.norm(target)
        if err > recon_tol:
            fails.append(f"sigma*sigma^T reconstruction error {err:.3e} > {recon_tol}")
        floor = self.delta / self.eta + EIG_HARD_FLOOR
        w2 = np.linalg.eigvalsh(self.sigma @ self.sigma.T)
        if w2.min() < floor:
            fails.append(f"lambda_min(sigma^2) = {w2.min():.6e} below delta/eta - 1e-10")
        return fails


def spd_sqrt(mat: np.ndarray, hard_floor: float = EIG_HARD_FLOOR) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues in [hard_floor, 0) are treated as rounding noise and clipped
    to 0; anything below hard_floor raises (a genuinely indefinite input
    signals a broken covariance computation upstream).
    """
    sym = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(sym)
    if w.min() < hard_floor:
        raise CoefficientError(
            f"matrix has eigenvalue {w.min():.6e} below the {hard_floor} floor")
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    return 0.5 * (root + root.T)


def sigma_matrix(net: QNetSpec, spec: MdpSpec, q: np.ndarray, x: np.ndarray,
                 y: np.ndarray, eta: float, delta: float) -> CoefficientSet:
    """Dense (b, Sigma, beta_bar, sigma) at (x, y) by exact enumeration."""
    if not (eta > 0.0 and delta > 0.0):
        raise ValueError("eta and delta must be positive")
    enc = net.encode_all_pairs()
    maxq_y = max_q_by_state(net, y[None, :], enc)
    stats = head_stats(net, spec, q, x[None, :], maxq_y, enc)
    g = stats.g[0]  # (K, d)
    b = drift_from_stats(stats)[0]
    second = (g * (stats.q_flat * stats.Ec2[0])[:, None]).T @ g
    Sigma = second - np.outer(b, b)
    Sigma = 0.5 * (Sigma + Sigma.T)
    V2 = spec.V.reshape(-1) ** 2
    beta = (g * (stats.q_flat * V2)[:, None]).T @ g
    beta = 0.5 * (beta + beta.T)
    d = net.d
    S = Sigma + beta + (delta / eta) * np.eye(d)
    w, v = np.linalg.eigh(S)
    if w.min() < delta / eta + EIG_HARD_FLOOR:
        raise CoefficientError(
            f"Sigma + beta_bar has eigenvalue {w.min() - delta / eta:.6e} "
            f"below the {EIG_HARD_FLOOR} floor")
    sig = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    sig = 0.5 * (sig + sig.T)
    return CoefficientSet(b=b, Sigma=Sigma, beta_bar=beta, sigma=sig, eta=eta, delta=delta)


@dataclass
class SigmaFactors:
    """Low-rank representation of sigma(x, y) for a batch of points.

    sigma^2 = scale*I + U diag(lam) U^T with orthonormal U (N, d, K), so the
    exact symmetric root applies as
        sigma z = sqrt(scale) z + U (sqrt(lam + scale) - sqrt(scale)) U^T z.
    Structurally lambda_min(sigma^2) >= scale = delta/eta.
    """

    scale: float
    U: np.ndarray
    lam: np.ndarray

    def apply(self, z: np.ndarray) -> np.ndarray:
        uz = np.einsum("ndk,nd->nk", self.U, z)
        fac = np.sqrt(self.lam + self.scale) - np.sqrt(self.scale)
        return np.sqrt(self.scale) * z + np.einsum("ndk,nk->nd", self.U, fac * uz)

    def dense(self) -> np.ndarray:
        """(N, d, d) dense sigma matrices (for checks; O(d^2) memory)."""
        n, d, _ = self.U.shape
        eye = np.broadcast_to(np.eye(d), (n, d, d))
        fac = np.sqrt(self.lam + self.scale) - np.sqrt(self.scale)
        return np.sqrt(self.scale) * eye + np.einsum(
            "ndk,nk,nek->nde", self.U, fac, self.U)


def lowrank_ghat(stats: HeadStats, V_flat: np.ndarray) -> np.ndarray:
    """Closed-form factor Ghat (N, d, K) with Ghat Ghat^T = Sigma + beta_bar.

    Sigma + beta_bar = G^T M G with the K x K core
    M = diag(q*(Ec2 + V^2)) - v v^T, v = q*Ec, which is PSD by the weighted
    Cauchy-Schwarz inequality; M factors in closed form through
    M = D^{1/2}(I - u u^T)D^{1/2}, |u| <= 1.
    """
    n, K, d = stats.g.shape
    D = stats.q_flat * (stats.Ec2 + V_flat[None, :] ** 2)  # (N, K)
    v = stats.q_flat * stats.Ec
    Dh = np.sqrt(np.clip(D, 0.0, None))
    u = np.where(D > _TINY, v / np.maximum(Dh, _TINY), 0.0)
    nu2 = (u * u).sum(axis=1)
    uhat = u / np.maximum(np.sqrt(nu2), _TINY)[:, None]
    s = 1.0 - np.sqrt(np.clip(1.0 - np.minimum(nu2, 1.0), 0.0, None))
    F = np.eye(K)[None, :, :] - s[:, None, None] * uhat[:, :, None] * uhat[:, None, :]
    F = Dh[:, :, None] * F
    return stats.g.transpose(0, 2, 1) @ F


def sigma_factors(stats: HeadStats, V_flat: np.ndarray, eta: float,
                  delta: float) -> SigmaFactors:
    """Eigendecompose the K x K Gram of Ghat to represent sigma exactly."""
    ghat = lowrank_ghat(stats, V_flat)
    gram = ghat.transpose(0, 2, 1) @ ghat
    lam, vecs = np.linalg.eigh(gram)
    lam = np.clip(lam, 0.0, None)
    inv = np.where(lam > _TINY, 1.0 / np.sqrt(np.maximum(lam, _TINY)), 0.0)
    U = (ghat @ vecs) * inv[:, None, :]
    lam = np.where(lam > _TINY, lam, 0.0)
    return SigmaFactors(scale=delta / eta, U=U, lam=lam)


@dataclass
class AssumptionEstimates:
    """Empirical stand-ins for the drift/diffusion regularity constants."""

    L_hat: float
    K_hat: float
    beta_max_hat: float
    b00_norm: float
    n_pairs: int
    radius: float

    def as_dict(self) -> dict:
        return {"L_hat": self.L_hat, "K_hat": self.K_hat,
                "beta_max_hat": self.beta_max_hat, "b00_norm": self.b00_norm,
                "n_pairs": self.n_pairs, "radius": self.radius}


def estimate_constants(net: QNetSpec, spec: MdpSpec, q: np.ndarray, eta: float,
                       delta: float, n_pairs: int, radius: float,
                       rng: np.random.Generator) -> AssumptionEstimates:
    """Probe-based estimates of the Lipschitz and growth constants.

    L_hat is the max drift difference ratio over sampled point pairs; K_hat
    bounds the per-sample drift growth sup |b_n(x,y)| / (1 + |x-y|) with the
    sup over reachable transitions taken exactly; beta_max_hat is the largest
    Hilbert-Schmidt norm of beta_bar over probed x.
    """
    if n_pairs < 100:
        raise ValueError("n_pairs must be >= 100")
    d = net.d
    enc = net.encode_all_pairs()
    V_flat = spec.V.reshape(-1)
    q_flat = np.asarray(q, dtype=np.float64).reshape(-1)
    p_flat = spec.p.reshape(-1, spec.n_states)
    reachable = p_flat > 0.0

    def batch(nx, ny):
        maxq_y = max_q_by_state(net, ny, enc)
        st = head_stats(net, spec, q, nx, maxq_y, enc)
        b = drift_from_stats(st)
        # exact sup over transitions of |c| per head (residual is monotone in maxQ)
        hi = np.where(reachable[None, :, :], maxq_y[:, None, :], -np.inf).max(axis=2)
        lo = np.where(reachable[None, :, :], maxq_y[:, None, :], np.inf).min(axis=2)
        base = spec.R.reshape(-1)[None, :] - st.Qx
        supc = np.maximum(np.abs(base + spec.gamma * hi), np.abs(base + spec.gamma * lo))
        gnorm = np.linalg.norm(st.g, axis=2)
        sup_bn = np.where(q_flat[None, :] > 0.0, supc * gnorm, 0.0).max(axis=1)
        w = q_flat * V_flat ** 2
        gg = np.einsum("nkd,nld->nkl", st.g, st.g)
        beta_fro = np.sqrt(np.einsum("k,l,nkl->n", w, w, gg ** 2))
        return b, sup_bn, beta_fro

    # pair index leads so a larger n_pairs extends the probe set
    pts = radius * rng.uniform(-1.0, 1.0, (n_pairs, 4, d))
    x1, y1, x2, y2 = pts[:, 0], pts[:, 1], pts[:, 2], pts[:, 3]
    b1, sup1, fro1 = batch(x1, y1)
    b2, sup2, fro2 = batch(x2, y2)
    denom = np.linalg.norm(x1 - x2, axis=1) + np.linalg.norm(y1 - y2, axis=1)
    ok = denom > 1e-12
    L_hat = float((np.linalg.norm(b1 - b2, axis=1)[ok] / denom[ok]).max(initial=0.0))
    growth1 = np.maximum(sup1, np.linalg.norm(b1, axis=1)) / (1.0 + np.linalg.norm(x1 - y1, axis=1))
    growth2 = np.maximum(sup2, np.linalg.norm(b2, axis=1)) / (1.0 + np.linalg.norm(x2 - y2, axis=1))
    K_hat = float(max(growth1.max(initial=0.0), growth2.max(initial=0.0)))
    beta_max_hat = float(max(fro1.max(initial=0.0), fro2.max(initial=0.0)))
    b00 = exact_drift_b(net, spec, q, np.zeros(d), np.zeros(d))
    return AssumptionEstimates(L_hat=L_hat, K_hat=K_hat, beta_max_hat=beta_max_hat,
                               b00_norm=float(np.linalg.norm(b00)),
                               n_pairs=n_pairs, radius=radius)


@dataclass
class GateResult:
    """Step-size admissibility under the estimated constants (2x safety)."""

    eta_max: float
    constraints: dict[str, float]
    delta_ok: bool
    safety: float

    def passes(self, eta: float) -> bool:
        return self.delta_ok and eta <= self.eta_max

    def binding(self, eta: float) -> str | None:
        if not self.delta_ok:
            return "delta"
        viol = {k: v for k, v in self.constraints.items() if eta > v}
        if not viol:
            return None
        return min(viol, key=viol.get)


def step_size_gate(est: AssumptionEstimates, delta: float, safety: float = 2.0) -> GateResult:
    """eta <= min(delta, 1/(64 L), L/(8 K^2)) with safety-inflated constants."""
    L = safety * est.L_hat
    K = safety * est.K_hat
    constraints = {
        "delta": delta,
        "lipschitz_1_over_64L": np.inf if L == 0.0 else 1.0 / (64.0 * L),
        "growth_L_over_8K2": np.inf if K == 0.0 else est.L_hat / (8.0 * K * K),
    }
    return GateResult(eta_max=float(min(constraints.values())),
                      constraints=constraints, delta_ok=0.0 < delta <= 1.0,
                      safety=safety)
