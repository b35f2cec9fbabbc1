"""Transmit beamforming step: successive convex approximation over {w[s]}.

Trajectory, reflector phases, combiners, and the worst-case CSI perturbations
stay fixed. Internally everything is normalized by the noise amplitude so the
cone programs see O(1) received powers; results are invariant because the
normalization cancels in every SNR.

Per slot, three affine-in-w signal maps drive the program:

    useful    a_d^H w                    (IoT, perfectly known)
    eve       b_e^H w + c_e              (frozen worst-case perturbation folded in)
    target    b_t^H w
    echo      c^H w                      (sensing round trip)

The eavesdropper powers sit under epigraph slacks whose log terms are Taylor
linearized; the useful quadratic is lower-bounded by its tangent, which keeps
the objective concave; the echo quadratic is lower-bounded by its tangent,
which keeps the sensing constraint a valid restriction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .channel import ChannelSnapshot
from .conic import ConicProgram, Tolerances, solve
from .metrics import SolutionState
from .scenario import ScenarioConfig

LN2 = float(np.log(2.0))


def effective_vectors(snap: ChannelSnapshot, theta, delta_e=None, delta_t=None):
    """Noise-normalized affine signal maps (a_d, b_e, c_e, b_t) of one slot."""
    theta = np.asarray(theta, dtype=complex)
    n_ris = snap.H_ur.shape[0]
    d_r = np.zeros(n_ris, dtype=complex) if delta_e is None else np.asarray(delta_e)[:n_ris]
    d_direct = 0.0 if delta_e is None else complex(np.asarray(delta_e)[n_ris])
    d_t = np.zeros(n_ris, dtype=complex) if delta_t is None else np.asarray(delta_t)

    cascade = snap.H_ur.conj().T * theta.conj()  # columns H_ur^H Theta^H
    a_d = snap.L_ud * snap.h_ud + snap.L_urd * cascade @ snap.h_rd
    b_e = snap.L_ue * snap.h_ue + snap.L_ure * cascade @ (snap.h_re + d_r)
    c_e = snap.L_ue * np.conj(d_direct)
    b_t = snap.L_urt * cascade @ (snap.h_rt + d_t)
    return a_d, b_e, c_e, b_t


@dataclass(frozen=True)
class SensingLinearization:
    """Tangent lower bound of the echo power |c^H w|^2 around w0."""

    c: np.ndarray          # noise-normalized echo map
    m0: complex            # c^H w0
    degenerate: bool       # echo map vanished; no w can satisfy gamma > 0

    def value(self, w) -> float:
        """Surrogate echo power (noise units) at w; exact at w0."""
        return float(2.0 * np.real(np.conj(self.m0) * (self.c.conj() @ w)) - abs(self.m0) ** 2)

    def true_power(self, w) -> float:
        return float(abs(self.c.conj() @ w) ** 2)

    def feasible_at_expansion(self, gamma: float) -> bool:
        return abs(self.m0) ** 2 >= gamma * (1.0 - 1e-9)

    def constraint(self, w_var, gamma: float, slack=None):
        lhs = 2.0 * cp.real(np.conj(self.m0) * (self.c.conj() @ w_var)) - abs(self.m0) ** 2
        if slack is None:
            return lhs >= gamma
        return lhs >= gamma - slack


def linearize_sensing(snap: ChannelSnapshot, theta, u, w0, noise_power: float) -> SensingLinearization:
    """Echo tangent at w0 for fixed phases and combiner, in noise units.

    The bound is gamma * ||u||^2 <= |c^H w|^2 / sigma^2 with c absorbing the
    1/sigma normalization, so `constraint(w, gamma * ||u||^2)` restricts the
    true sensing constraint and touches it at w0.
    """
    theta = np.asarray(theta, dtype=complex)
    u = np.asarray(u, dtype=complex)
    Theta = np.diag(theta)
    M = snap.L_urt**2 * snap.H_ur.conj().T @ Theta @ snap.A_rt @ Theta @ snap.H_ur
    c = (M.conj().T @ u) / np.sqrt(noise_power)  # c^H w = u^H M w / sigma
    m0 = complex(c.conj() @ np.asarray(w0, dtype=complex))
    return SensingLinearization(c=c, m0=m0, degenerate=bool(np.allclose(c, 0.0)))


@dataclass
class TxbfIterate:
    """Expansion point of one SCA step."""

    w0: list                   # per-slot vectors
    zeta1_0: np.ndarray        # Eve received power at w0, noise units
    zeta2_0: np.ndarray        # UT received power at w0, noise units


@dataclass
class SurrogateObjective:
    """Concave minorant of the unclamped weighted secrecy objective."""

    cfg: ScenarioConfig
    terms: list            # per slot (a_d, b_e, c_e, b_t), noise-normalized
    iterate: TxbfIterate

    def _lin_log(self, z, z0):
        # first-order expansion of log2(1 + z) around z0
        return np.log2(1.0 + z0) + (z - z0) / (LN2 * (1.0 + z0))

    def scales(self, s: int):
        """Expansion-point magnitudes (useful, eve, ut) of slot s.

        The program states its slacks in these units so the solver sees
        O(1) data; received powers in noise units span many decades.
        """
        a_d = self.terms[s][0]
        alpha0 = complex(a_d.conj() @ self.iterate.w0[s])
        return (
            1.0 + abs(alpha0) ** 2,
            1.0 + float(self.iterate.zeta1_0[s]),
            1.0 + float(self.iterate.zeta2_0[s]),
        )

    def expr(self, w_var, z1, z2):
        """cvxpy expression over the (S, N_t) beamformer variable and slacks.

        z1[s] and z2[s] are the eavesdropper and target received powers in
        expansion units: actual power = scales(s) factor times the slack.
        """
        cfg, it = self.cfg, self.iterate
        total = 0
        for s, (a_d, b_e, c_e, b_t) in enumerate(self.terms):
            alpha0 = complex(a_d.conj() @ it.w0[s])
            useful_lb = 2.0 * cp.real(np.conj(alpha0) * (a_d.conj() @ w_var[s])) - abs(alpha0) ** 2
            ku, k1, k2 = self.scales(s)
            # log(1 + x) = log(ku) + log((1 + x) / ku); the shifted argument
            # equals 1 at the expansion point
            gain = (np.log(ku) + cp.log((1.0 + useful_lb) / ku)) / LN2
            lin1 = self._lin_log(k1 * z1[s], it.zeta1_0[s])
            lin2 = self._lin_log(k2 * z2[s], it.zeta2_0[s])
            total += gain - cfg.omega * lin1 - (1.0 - cfg.omega) * lin2
        return total / cfg.n_slots

    def value(self, w_list, z1=None, z2=None) -> float:
        """Numeric surrogate; slacks default to the true received powers."""
        cfg, it = self.cfg, self.iterate
        z1 = self.eve_powers(w_list) if z1 is None else np.asarray(z1, dtype=float)
        z2 = self.ut_powers(w_list) if z2 is None else np.asarray(z2, dtype=float)
        total = 0.0
        for s, (a_d, b_e, c_e, b_t) in enumerate(self.terms):
            alpha0 = complex(a_d.conj() @ it.w0[s])
            useful_lb = 2.0 * np.real(np.conj(alpha0) * (a_d.conj() @ w_list[s])) - abs(alpha0) ** 2
            if useful_lb <= -1.0:
                return -np.inf
            total += (
                np.log2(1.0 + useful_lb)
                - cfg.omega * self._lin_log(z1[s], it.zeta1_0[s])
                - (1.0 - cfg.omega) * self._lin_log(z2[s], it.zeta2_0[s])
            )
        return total / cfg.n_slots

    def true_value(self, w_list, z1=None, z2=None) -> float:
        """Unclamped objective with exact logs (slack form when z given)."""
        cfg = self.cfg
        z1 = self.eve_powers(w_list) if z1 is None else np.asarray(z1, dtype=float)
        z2 = self.ut_powers(w_list) if z2 is None else np.asarray(z2, dtype=float)
        total = 0.0
        for s, (a_d, b_e, c_e, b_t) in enumerate(self.terms):
            useful = abs(a_d.conj() @ w_list[s]) ** 2
            total += (
                np.log2(1.0 + useful)
                - cfg.omega * np.log2(1.0 + z1[s])
                - (1.0 - cfg.omega) * np.log2(1.0 + z2[s])
            )
        return total / cfg.n_slots

    def eve_powers(self, w_list) -> np.ndarray:
        return np.array([
            abs(b_e.conj() @ w_list[s] + c_e) ** 2
            for s, (a_d, b_e, c_e, b_t) in enumerate(self.terms)
        ])

    def ut_powers(self, w_list) -> np.ndarray:
        return np.array([
            abs(b_t.conj() @ w_list[s]) ** 2
            for s, (a_d, b_e, c_e, b_t) in enumerate(self.terms)
        ])


def surrogate_objective(cfg: ScenarioConfig, snaps, deltas, theta_list, iterate: TxbfIterate) -> SurrogateObjective:
    sigma = np.sqrt(cfg.noise_power)
    terms = []
    for s in range(cfg.n_slots):
        de, dt = deltas[s] if deltas is not None else (None, None)
        a_d, b_e, c_e, b_t = effective_vectors(snaps[s], theta_list[s], de, dt)
        terms.append((a_d / sigma, b_e / sigma, c_e / sigma, b_t / sigma))
    return SurrogateObjective(cfg=cfg, terms=terms, iterate=iterate)


@dataclass
class TxbfResult:
    w: list
    trace: list
    ok: bool
    flags: list = field(default_factory=list)
    n_iters: int = 0


_SENSING_PENALTY = 1.0e4


def solve_txbf(cfg: ScenarioConfig, snaps, deltas, sol: SolutionState) -> TxbfResult:
    """Run the inner SCA loop; monotone in the true frozen-delta objective."""
    S, n_tx = cfg.n_slots, cfg.n_tx
    w_cur = [np.array(w, dtype=complex) for w in sol.w]
    flags: list = []

    sensing = [
        linearize_sensing(snaps[s], sol.theta[s], sol.u[s], w_cur[s], cfg.noise_power)
        for s in range(S)
    ]
    gamma_rhs = [
        cfg.gamma_sense * float(np.vdot(sol.u[s], sol.u[s]).real) for s in range(S)
    ]
    if cfg.gamma_sense > 0 and any(lin.degenerate for lin in sensing):
        return TxbfResult(w=w_cur, trace=[], ok=False, flags=["sensing-degenerate"])

    def make_objective(w0):
        it = TxbfIterate(
            w0=w0,
            zeta1_0=np.zeros(S),
            zeta2_0=np.zeros(S),
        )
        obj = surrogate_objective(cfg, snaps, deltas, sol.theta, it)
        it.zeta1_0 = obj.eve_powers(w0)
        it.zeta2_0 = obj.ut_powers(w0)
        return obj

    obj0 = make_objective(w_cur)
    trace = [obj0.true_value(w_cur)]

    for it_count in range(1, cfg.sca_max_iters + 1):
        obj = make_objective(w_cur)
        # refresh the sensing tangents at the current expansion point
        sensing = [
            linearize_sensing(snaps[s], sol.theta[s], sol.u[s], w_cur[s], cfg.noise_power)
            for s in range(S)
        ]
        need_relax = cfg.gamma_sense > 0 and any(
            not sensing[s].feasible_at_expansion(gamma_rhs[s]) for s in range(S)
        )

        prog = ConicProgram("txbf")
        W = prog.variable("W", (S, n_tx), complex=True)
        z1 = prog.variable("z1", (S,), nonneg=True)
        z2 = prog.variable("z2", (S,), nonneg=True)
        slack = None
        if need_relax:
            slack = prog.variable("sensing_slack", (S,), nonneg=True)
            if "sensing-relaxed" not in flags:
                flags.append("sensing-relaxed")

        cons = []
        for s in range(S):
            a_d, b_e, c_e, b_t = obj.terms[s]
            _, k1, k2 = obj.scales(s)
            r1, r2 = np.sqrt(k1), np.sqrt(k2)
            cons.append(cp.square(cp.abs((b_e / r1).conj() @ W[s] + c_e / r1)) <= z1[s])
            cons.append(cp.square(cp.abs((b_t / r2).conj() @ W[s])) <= z2[s])
            if cfg.gamma_sense > 0:
                cons.append(
                    sensing[s].constraint(W[s], gamma_rhs[s], None if slack is None else slack[s])
                )
            cons.append(cp.sum_squares(W[s]) <= cfg.p_peak)
        cons.append(cp.sum_squares(W) / S <= cfg.p_avg)
        prog.add(*cons)
        expr = obj.expr(W, z1, z2)
        if slack is not None:
            expr = expr - _SENSING_PENALTY * cp.sum(slack)
        prog.maximize(expr)

        result = solve(prog, Tolerances(), backend=cfg.solver_backend)
        if not result.ok and cfg.solver_backend != "scs":
            # loose retry; the step is re-validated on the true objective
            # and the power budget before anything trusts it
            result = solve(prog, Tolerances(1e-6, 1e-6), backend="scs")
        if not result.ok:
            flags.append(f"solver-{result.status}")
            return TxbfResult(w=w_cur, trace=trace, ok=False, flags=flags, n_iters=it_count)

        w_new = [np.array(result.values["W"][s]) for s in range(S)]
        # loosely converged solver points can blow the power budget while
        # raising the objective; screen them out before trusting val_new
        pw = [float(np.vdot(x, x).real) for x in w_new]
        if (sum(pw) / S > cfg.p_avg * (1.0 + 1e-6)
                or max(pw) > cfg.p_peak * (1.0 + 1e-6)):
            flags.append("step-infeasible")
            break
        val_new = obj.true_value(w_new)
        if not np.isfinite(val_new) or val_new < trace[-1] - 1e-9:
            # surrogate step failed to improve the true frozen-delta value
            flags.append("step-rejected")
            break
        improved = val_new - trace[-1]
        w_cur = w_new
        trace.append(val_new)
        if improved < cfg.sca_tol:
            break

    return TxbfResult(w=w_cur, trace=trace, ok=True, flags=flags, n_iters=len(trace) - 1)
