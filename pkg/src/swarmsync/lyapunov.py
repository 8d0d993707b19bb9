"""Hurwitz design, dwell-time quantities, the K-matrix test and composite V.

Singular-value extremes are written ``smax``/``smin``; for the symmetric
positive-definite matrices used here they are the extreme eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import solve_continuous_lyapunov

from .errors import InvalidDecayRate, NonPositivePole, ValidationError
from .graph import GraphLyapunov, Topology, algebraic_connectivity, build_matrices, graph_lyapunov

Array = NDArray[np.float64]


def smax(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.linalg.svd(M, compute_uv=False)[0]) if M.size else 0.0


def smin(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.linalg.svd(M, compute_uv=False)[-1]) if M.size else 0.0


@dataclass(frozen=True)
class HurwitzDesign:
    poles: Array
    lambda_bar: Array
    companion: Array
    P1: Array
    beta: float

    def residual(self) -> float:
        D, P1 = self.companion, self.P1
        return float(np.max(np.abs(D.T @ P1 + P1 @ D + self.beta * np.eye(D.shape[0]))))


def companion(lambda_bar) -> Array:
    """Shift matrix with ``-lambda_1 .. -lambda_{n-1}`` in the last row."""
    lam = np.asarray(lambda_bar, dtype=float).reshape(-1)
    m = lam.size
    D = np.eye(m, k=1)
    D[-1, :] = -lam
    return D


def hurwitz_from_poles(poles: Sequence[float], beta: float = 1.0) -> HurwitzDesign:
    """Weights from ``prod(s + xi_j)`` and the matching ``P1``.

    ``lambda_1`` is the constant coefficient and ``lambda_{n-1}`` multiplies
    ``s^{n-2}``.  ``P1`` solves ``D^T P1 + P1 D = -beta I``.
    """
    xi = np.asarray(poles, dtype=float).reshape(-1)
    if xi.size == 0 or np.any(~(xi > 0)):
        raise NonPositivePole(f"all poles must be positive reals, got {xi.tolist()}")
    if not beta > 0:
        raise ValidationError("beta", "beta must be positive")
    coeffs = np.real(np.poly(-xi))  # [1, c_{m-1}, ..., c_0]
    lam = coeffs[::-1][:-1].copy()
    D = companion(lam)
    P1 = solve_continuous_lyapunov(D.T, -beta * np.eye(lam.size))
    P1 = 0.5 * (P1 + P1.T)
    return HurwitzDesign(xi, lam, D, P1, float(beta))


def design_from_lambda(lambda_bar: Sequence[float], beta: float = 1.0) -> HurwitzDesign:
    """Same as :func:`hurwitz_from_poles` but starting from the weights."""
    lam = np.asarray(lambda_bar, dtype=float).reshape(-1)
    roots = np.roots(np.concatenate([[1.0], lam[::-1]]))
    if np.any(roots.real >= 0):
        raise NonPositivePole(f"weights {lam.tolist()} do not give a Hurwitz polynomial")
    D = companion(lam)
    P1 = solve_continuous_lyapunov(D.T, -beta * np.eye(lam.size))
    return HurwitzDesign(-roots.real, lam, D, 0.5 * (P1 + P1.T), float(beta))


@dataclass(frozen=True)
class TopologyRate:
    index: int
    name: str
    half_min_q: float
    coupling_term: float
    s2: float

    @property
    def rho(self) -> float:
        return self.half_min_q - self.coupling_term


def topology_rate(topology: Topology, nu1: float, nu2: float, lambda_bar, index: int = 0,
                  gl: GraphLyapunov | None = None) -> TopologyRate:
    gl = gl or graph_lyapunov(topology, nu1, nu2)
    D, _, B = build_matrices(topology)
    lam_norm = float(np.linalg.norm(np.asarray(lambda_bar, dtype=float)))
    coupling = smax(gl.P) * smax(topology.adjacency) / smin(D + B) * lam_norm
    return TopologyRate(index, topology.name, 0.5 * smin(gl.Q), coupling, algebraic_connectivity(topology))


def decay_rate(topologies: Sequence[Topology], nu1: float, nu2: float, lambda_bar) -> tuple[list[TopologyRate], float]:
    """Per-topology decay rates and their minimum ``rho0``."""
    rates = [topology_rate(T, nu1, nu2, lambda_bar, k) for k, T in enumerate(topologies)]
    return rates, min(r.rho for r in rates)


def _block_extremes(G) -> tuple[float, float]:
    mats = G if isinstance(G, (list, tuple)) else [G]
    return max(smax(m) for m in mats), min(smin(m) for m in mats)


def eta_zeta(P, P1, G, G0, Gw) -> tuple[Array, Array]:
    """Lower and upper diagonal weightings bracketing ``V`` by ``|z|^2``.

    Gains may be a single matrix or a per-agent list (a block diagonal).
    """
    gmax, gmin = _block_extremes(G)
    g0max, g0min = _block_extremes(G0)
    gwmax, gwmin = _block_extremes(Gw)
    eta = np.array([smin(P) / 2, 1 / (2 * gmax), 1 / (2 * g0max), 1 / (2 * gwmax), smin(P1) / 2])
    zeta = np.array([smax(P) / 2, 1 / (2 * gmin), 1 / (2 * g0min), 1 / (2 * gwmin), smax(P1) / 2])
    return eta, zeta


def jump_factor(P_list: Sequence[Array], P1, G, G0, Gw) -> float:
    """Worst ratio ``max(zeta_new) / min(eta_old)`` over ordered topology pairs."""
    pairs = [eta_zeta(P, P1, G, G0, Gw) for P in P_list]
    top = max(z.max() for _, z in pairs)
    bottom = min(e.min() for e, _ in pairs)
    return float(top / bottom)


def min_dwell_time(mu: float, rho0: float) -> float:
    """Minimum average dwell time ``-ln(mu) / ln(1 - rho0)``."""
    if not mu >= 1:
        raise ValidationError("jump factor", f"mu must be >= 1, got {mu}")
    if not 0 < rho0 < 1:
        raise InvalidDecayRate(f"decay rate {rho0:.6g} is outside (0, 1); the dwell-time bound does not apply")
    return -math.log(mu) / math.log1p(-rho0)


@dataclass(frozen=True)
class DwellTimeReport:
    rho0: float
    mu: float
    tau_star: float | None
    per_topology: tuple[TopologyRate, ...]
    conclusive: bool
    note: str = ""

    def as_dict(self) -> dict:
        return {
            "rho0": self.rho0,
            "mu": self.mu,
            "tau_star": self.tau_star,
            "conclusive": self.conclusive,
            "note": self.note,
            "per_topology": [
                {"id": r.index, "name": r.name, "half_min_eig_Q": r.half_min_q,
                 "coupling_term": r.coupling_term, "rho": r.rho, "s2": r.s2}
                for r in self.per_topology
            ],
        }


def dwell_time_report(topologies: Sequence[Topology], nu1: float, nu2: float, design: HurwitzDesign,
                      G, G0, Gw) -> DwellTimeReport:
    rates, rho0 = decay_rate(topologies, nu1, nu2, design.lambda_bar)
    P_list = [graph_lyapunov(T, nu1, nu2).P for T in topologies]
    mu = jump_factor(P_list, design.P1, G, G0, Gw)
    try:
        tau = min_dwell_time(mu, rho0)
        return DwellTimeReport(rho0, mu, tau, tuple(rates), True)
    except InvalidDecayRate as exc:
        return DwellTimeReport(rho0, mu, None, tuple(rates), False, str(exc))


@dataclass(frozen=True)
class KMatrixReport:
    K: Array
    omega: Array
    minors: Array
    sylvester_ok: bool
    failing_minor: int | None
    min_eig: float
    B_d: float
    omega_norm: float
    mu1: float
    mu1_threshold: float
    terms: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "sylvester_ok": self.sylvester_ok,
            "failing_minor": self.failing_minor,
            "min_eig_K": self.min_eig,
            "B_d": self.B_d,
            "omega_norm_1": self.omega_norm,
            "mu1": self.mu1,
            "mu1_threshold": self.mu1_threshold,
            "minors": self.minors.tolist(),
            "K": self.K.tolist(),
            "omega": self.omega.tolist(),
            **self.terms,
        }


def assemble_k(beta: float, kappa: float, kappaw: float, kappa0: float, g: float,
               gamma1: float, gamma2: float, gamma3: float, mu1: float) -> Array:
    """Arrow matrix with the leakage gains on the diagonal and couplings in the last row."""
    K = np.diag([beta / 2, kappa, kappaw, kappa0, mu1])
    K[4, :4] = K[:4, 4] = [g, gamma1, gamma2, gamma3]
    return K


def mu1_threshold(beta: float, kappa: float, kappaw: float, kappa0: float,
                  g: float, gamma1: float, gamma2: float, gamma3: float) -> float:
    """Smallest ``mu1`` that keeps the last leading minor positive."""
    return g * g / (beta / 2) + gamma1**2 / kappa + gamma2**2 / kappaw + gamma3**2 / kappa0


def leading_minors(K: Array) -> Array:
    return np.array([np.linalg.det(K[:k, :k]) for k in range(1, K.shape[0] + 1)])


def k_matrix_from_terms(beta, kappa, kappaw, kappa0, g, gamma1, gamma2, gamma3, mu1, omega) -> KMatrixReport:
    K = assemble_k(beta, kappa, kappaw, kappa0, g, gamma1, gamma2, gamma3, mu1)
    omega = np.asarray(omega, dtype=float)
    minors = leading_minors(K)
    bad = np.flatnonzero(minors <= 0)
    ok = bad.size == 0
    eig = float(np.linalg.eigvalsh(K)[0])
    onorm = float(np.sum(np.abs(omega)))
    B_d = onorm / eig if ok and eig > 0 else math.inf
    thr = mu1_threshold(beta, kappa, kappaw, kappa0, g, gamma1, gamma2, gamma3)
    return KMatrixReport(K, omega, minors, ok, None if ok else int(bad[0]) + 1, eig, B_d, onorm, mu1, thr)


def k_matrix_report(
    topology: Topology,
    nu1: float,
    nu2: float,
    design: HurwitzDesign,
    kappa: float,
    kappaw: float,
    kappa0: float,
    Phi: tuple[float, float, float],
    Theta: tuple[float, float, float] = (0.0, 0.0, 0.0),
    cE0: float = 0.0,
    residual_bound: float = 0.0,
    gl: GraphLyapunov | None = None,
) -> KMatrixReport:
    """K-matrix and ultimate bound ``B_d`` for one topology.

    ``Phi`` are basis-norm bounds (agent, disturbance, leader), ``Theta`` the
    true-weight norm bounds, ``cE0`` the leader-correction estimate and
    ``residual_bound`` stands in for the approximation-residual constants.
    """
    gl = gl or graph_lyapunov(topology, nu1, nu2)
    D, _, B = build_matrices(topology)
    sA = smax(topology.adjacency)
    sP = smax(gl.P)
    lam_norm = float(np.linalg.norm(design.lambda_bar))
    h = sP * sA / smin(D + B) * lam_norm
    mu1 = 0.5 * smin(gl.Q) - h
    g = -0.5 * (h * float(np.linalg.norm(design.companion)) + smax(design.P1))
    Phi_n, Phi_nw, Phi_n0 = Phi
    gamma1 = -0.5 * Phi_n * sP * sA
    gamma2 = -0.5 * Phi_nw * sP * sA
    gamma3 = -0.5 * Phi_n0 * sP * sA
    mu2 = 0.5 * cE0 * smin(gl.Q)
    Lam = sP * smax(gl.coupling) * residual_bound + mu2
    Th_n, Th_nw, Th_n0 = Theta
    omega = [0.0, kappa * Th_n, kappaw * Th_nw, kappa0 * Th_n0, Lam]
    rep = k_matrix_from_terms(design.beta, kappa, kappaw, kappa0, g, gamma1, gamma2, gamma3, mu1, omega)
    rep.terms.update({"h": h, "g": g, "gamma1": gamma1, "gamma2": gamma2, "gamma3": gamma3,
                      "mu2": mu2, "Lambda": Lam, "topology": topology.name})
    return rep


@dataclass(frozen=True)
class VBreakdown:
    V1: float
    V2: float
    V3: float
    V4: float
    V5: float

    @property
    def total(self) -> float:
        return self.V1 + self.V2 + self.V3 + self.V4 + self.V5

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.V1, self.V2, self.V3, self.V4, self.V5)


def _weighted_trace(W: Array, Ginv: Array) -> float:
    # sum_i 0.5 tr(W_i^T Ginv_i W_i) for stacked (N, q, p) weights
    return 0.5 * float(np.einsum("iqp,iqs,isp->", W, Ginv, W))


def composite_V(
    r: Array,
    E1: Array,
    P: Array,
    P1: Array,
    weight_errors: tuple[Array, Array, Array],
    Ginv: tuple[Array, Array, Array],
) -> VBreakdown:
    """Composite Lyapunov value and its five parts.

    ``r`` is ``(N, p)``; ``E1`` is ``(N, n-1, p)`` holding orders ``1..n-1``;
    ``weight_errors`` are stacked ``(N, q, p)`` true-minus-estimated weights
    (or the estimates themselves in diagnostic mode) and ``Ginv`` the stacked
    inverse gains ``(N, q, q)``.
    """
    V1 = 0.5 * float(np.einsum("ip,ij,jp->", r, P, r))
    V5 = 0.5 * float(np.einsum("ikp,kl,ilp->", E1, P1, E1))
    V2, V3, V4 = (_weighted_trace(W, Gi) for W, Gi in zip(weight_errors, Ginv))
    return VBreakdown(V1, V2, V3, V4, V5)


def z_vector(r: Array, E1: Array, weight_errors: tuple[Array, Array, Array]) -> Array:
    """``[|E1|, |theta~|, |theta~_w|, |theta~_0|, |r|]`` with Frobenius norms."""
    th, th0, thw = weight_errors
    return np.array([np.linalg.norm(E1), np.linalg.norm(th), np.linalg.norm(thw), np.linalg.norm(th0),
                     np.linalg.norm(r)])


def iota_weights(topologies: Sequence[Topology], gamma: float = 1.0, kappa_max: float | None = None) -> Array:
    """Connectivity weights ``1 / (1 + gamma (kappa_max - s2))`` of the max-composite diagnostic."""
    s2 = np.array([algebraic_connectivity(T) for T in topologies])
    km = float(s2.max()) if kappa_max is None else kappa_max
    return 1.0 / (1.0 + gamma * (km - s2))


def fit_weights(basis_rows: Array, targets: Array, ridge: float = 1e-10) -> Array:
    """Least-squares ``theta`` with ``basis_rows @ theta ~= targets`` (tiny ridge for rank safety)."""
    Phi = np.asarray(basis_rows, dtype=float)
    Y = np.asarray(targets, dtype=float)
    A = Phi.T @ Phi + ridge * np.eye(Phi.shape[1])
    return np.linalg.solve(A, Phi.T @ Y)


@dataclass(frozen=True)
class TrueWeights:
    """Best-fit weights of the true drifts and disturbance on the chosen bases."""

    theta: Array
    theta0: Array
    thetaw: Array
    residual: tuple[float, float, float]


def fit_true_weights(
    states: Array,
    leader: Array,
    times: Array,
    drifts: Sequence[Callable[[Array, float], Array]],
    leader_drift: Callable[[Array, float], Array],
    disturbances: Sequence[Callable[[float], Array]],
    bases,
) -> TrueWeights:
    """Fit ideal weights over a state envelope ``states[t, i]``, ``leader[t]``.

    Returns per-agent agent/disturbance weights ``(N, q, p)``, the leader
    weights ``(q0, p)`` and the worst residual per channel.
    """
    T, N = states.shape[:2]
    thetas, thetaws = [], []
    res = [0.0, 0.0, 0.0]
    Phiw = np.stack([bases.disturbance(states[k, 0], times[k]) for k in range(T)])
    for i in range(N):
        Phi = bases.state.batch(states[:, i], 0.0)
        F = np.stack([drifts[i](states[k, i], times[k]) for k in range(T)])
        th = fit_weights(Phi, F)
        thetas.append(th)
        res[0] = max(res[0], float(np.max(np.linalg.norm(F - Phi @ th, axis=1))))
        Wv = np.stack([disturbances[i](times[k]) for k in range(T)])
        thw = fit_weights(Phiw, Wv)
        thetaws.append(thw)
        res[1] = max(res[1], float(np.max(np.linalg.norm(Wv - Phiw @ thw, axis=1))))
    Phi0 = bases.leader.batch(leader, 0.0)
    F0 = np.stack([leader_drift(leader[k], times[k]) for k in range(T)])
    th0 = fit_weights(Phi0, F0)
    res[2] = float(np.max(np.linalg.norm(F0 - Phi0 @ th0, axis=1)))
    return TrueWeights(np.stack(thetas), th0, np.stack(thetaws), tuple(res))
