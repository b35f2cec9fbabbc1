"""Reflector phase step: semidefinite relaxation over the homogenized
correlation matrix Q = t t^H with t = [theta; 1].

With the beamformer, combiner, and trajectory fixed, every received power is
a quadratic form in t, so each becomes tr(G Q) for a Gram matrix G. The echo
power is the bilinear form tr(C_l Q C_r Q); a Cauchy-Schwarz tangent at the
current phases turns the sensing constraint into an affine restriction that
touches the true constraint there. The relaxation drops only the rank-one
condition, which is restored afterwards by eigenvector rounding or Gaussian
randomization, both guarded so the reported objective never decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .channel import ChannelSnapshot
from .conic import ConicProgram, Tolerances, solve
from .metrics import secrecy_rates, snr_echo, weighted_sum
from .scenario import ScenarioConfig

LN2 = float(np.log(2.0))
RANK_TOL = 1e-3
RANDOMIZATION_DRAWS = 100


def _gram(b: np.ndarray) -> np.ndarray:
    # |t^T b|^2 = t^H conj(b) b^T t, so the Gram factor is conj(b)
    c = np.conj(b)
    return np.outer(c, c.conj())


def _pad(mat: np.ndarray) -> np.ndarray:
    n = mat.shape[0]
    out = np.zeros((n + 1, n + 1), dtype=complex)
    out[:n, :n] = mat
    return out


@dataclass
class RisLiftedInstance:
    """Quadratic forms of one slot, homogenized to dimension N_R + 1."""

    f_useful: np.ndarray     # IoT received power Gram
    f_eve: np.ndarray        # eavesdropper power Gram, perturbation folded in
    f_target: np.ndarray     # sensed-user intercept power Gram
    sense_left: np.ndarray   # echo bilinear form, left factor (zero padded)
    sense_right: np.ndarray  # echo bilinear form, right factor (zero padded)
    q0: np.ndarray           # expansion point t0 t0^H
    # Gram factors of the rank-one forms above (f = v v^H), when known; the
    # solver states the program through these so canonicalization stays O(n^2)
    v_useful: np.ndarray | None = None
    v_eve: np.ndarray | None = None
    v_target: np.ndarray | None = None
    v_sense_left: np.ndarray | None = None
    v_sense_right: np.ndarray | None = None
    _kron_cache: dict = field(default_factory=dict, repr=False)

    @property
    def xi_hat(self) -> np.ndarray:
        """Kronecker lift of the echo form; only sensible at desk scale."""
        if "xi" not in self._kron_cache:
            self._kron_cache["xi"] = np.kron(self.sense_right.T, self.sense_left)
        return self._kron_cache["xi"]

    def xi_eig(self):
        """Eigendecomposition of the Kronecker lift (vectors, values)."""
        if "eig" not in self._kron_cache:
            vals, vecs = np.linalg.eigh(self.xi_hat)
            self._kron_cache["eig"] = (vecs, np.clip(vals, 0.0, None))
        return self._kron_cache["eig"]


def build_instance(
    cfg: ScenarioConfig,
    snap: ChannelSnapshot,
    w,
    u,
    theta0,
    delta_e=None,
    delta_t=None,
) -> RisLiftedInstance:
    """Assemble the per-slot quadratic forms around the current phases."""
    w = np.asarray(w, dtype=complex)
    u = np.asarray(u, dtype=complex)
    theta0 = np.asarray(theta0, dtype=complex)
    n_ris = cfg.n_ris
    if w.shape != (cfg.n_tx,) or u.shape != (cfg.n_tx,) or theta0.shape != (n_ris,):
        raise ValueError("w, u, theta0 dimensions must match the scenario")
    if snap.H_ur.shape != (n_ris, cfg.n_tx):
        raise ValueError("snapshot dimensions must match the scenario")

    d_r = np.zeros(n_ris, dtype=complex) if delta_e is None else np.asarray(delta_e)[:n_ris]
    d_direct = 0.0 if delta_e is None else complex(np.asarray(delta_e)[n_ris])
    d_t = np.zeros(n_ris, dtype=complex) if delta_t is None else np.asarray(delta_t)

    v = snap.H_ur @ w
    direct_iot = complex(snap.h_ud.conj() @ w)
    direct_eve = complex(snap.h_ue.conj() @ w)

    b_useful = np.concatenate([snap.L_urd * (np.conj(snap.h_rd) * v), [snap.L_ud * direct_iot]])
    b_eve = np.concatenate([
        snap.L_ure * (np.conj(snap.h_re + d_r) * v),
        [snap.L_ue * (direct_eve + np.conj(d_direct))],
    ])
    b_target = np.concatenate([snap.L_urt * (np.conj(snap.h_rt + d_t) * v), [0.0]])

    # echo: u^H M(theta) w = L^2 alpha_s (theta^T q)(theta^T p), and the
    # steering vector leads with a unit entry so A_rt[0, 0] is alpha_s
    q = np.conj(snap.H_ur @ u) * snap.a
    p = np.conj(snap.a) * v
    scale = abs(snap.L_urt**2 * snap.A_rt[0, 0]) ** 2
    sense_left = _pad(scale * _gram(q))
    sense_right = _pad(_gram(p))

    t0 = np.concatenate([theta0, [1.0]])
    return RisLiftedInstance(
        f_useful=_gram(b_useful),
        f_eve=_gram(b_eve),
        f_target=_gram(b_target),
        sense_left=sense_left,
        sense_right=sense_right,
        q0=np.outer(t0, t0.conj()),
        v_useful=np.conj(b_useful),
        v_eve=np.conj(b_eve),
        v_target=np.conj(b_target),
        v_sense_left=np.sqrt(scale) * np.concatenate([np.conj(q), [0.0]]),
        v_sense_right=np.concatenate([np.conj(p), [0.0]]),
    )


def bilinear_sense(inst: RisLiftedInstance, q_mat: np.ndarray) -> float:
    """Echo power numerator tr(C_l Q C_r Q) at a Hermitian Q."""
    return float(np.real(np.trace(inst.sense_left @ q_mat @ inst.sense_right @ q_mat)))


def sensing_lower_bound(inst: RisLiftedInstance, q_mat: np.ndarray) -> float:
    """Cauchy-Schwarz tangent of the echo form at q0; exact there.

    tr(C_l Q C_r Q) >= (Re tr(C_l Q C_r Q0))^2 / tr(C_l Q0 C_r Q0) for PSD
    factors and PSD Q, so the affine part can stand in for the echo power
    inside the semidefinite program.
    """
    s0 = bilinear_sense(inst, inst.q0)
    if s0 <= 0.0:
        return 0.0
    cross = float(np.real(np.trace(inst.sense_left @ q_mat @ inst.sense_right @ inst.q0)))
    return cross**2 / s0


def objective_terms(cfg: ScenarioConfig, inst: RisLiftedInstance, q_mat: np.ndarray) -> tuple:
    """Noise-normalized received powers (useful, eve, target) at Q."""
    useful = float(np.real(np.trace(inst.f_useful @ q_mat))) / cfg.noise_power
    eve = float(np.real(np.trace(inst.f_eve @ q_mat))) / cfg.noise_power
    target = float(np.real(np.trace(inst.f_target @ q_mat))) / cfg.noise_power
    return useful, eve, target


def true_objective(cfg: ScenarioConfig, inst: RisLiftedInstance, q_mat: np.ndarray) -> float:
    """Unclamped weighted secrecy objective of the relaxation at Q."""
    useful, eve, target = objective_terms(cfg, inst, q_mat)
    gain = np.log2(1.0 + useful)
    return (
        gain
        - cfg.omega * np.log2(1.0 + eve)
        - (1.0 - cfg.omega) * np.log2(1.0 + target)
    )


def surrogate_h(cfg: ScenarioConfig, inst: RisLiftedInstance, q_mat: np.ndarray) -> float:
    """Concave minorant: exact useful log, subtracted logs linearized at q0."""
    useful, eve, target = objective_terms(cfg, inst, q_mat)
    u0, e0, t0 = objective_terms(cfg, inst, inst.q0)
    lin_e = np.log2(1.0 + e0) + (eve - e0) / (LN2 * (1.0 + e0))
    lin_t = np.log2(1.0 + t0) + (target - t0) / (LN2 * (1.0 + t0))
    return np.log2(1.0 + useful) - cfg.omega * lin_e - (1.0 - cfg.omega) * lin_t


@dataclass
class RisResult:
    theta: np.ndarray
    objective: float         # clamped weighted secrecy value actually achieved
    accepted: bool
    rank_ratio: float
    q_tilde: np.ndarray
    flags: list


def _project_phases(t: np.ndarray) -> np.ndarray:
    n = t.shape[0] - 1
    pivot = t[n]
    if abs(pivot) < 1e-12:
        pivot = 1.0
    ratios = t[:n] / pivot
    safe = np.where(np.abs(ratios) < 1e-300, 1.0, ratios)
    return np.exp(1j * np.angle(safe))


def _clamped_value(cfg, snap, w, theta, u, delta_e, delta_t) -> float:
    r_e, r_t = secrecy_rates(cfg, snap, w, theta, delta_e, delta_t)
    return weighted_sum(r_e, r_t, cfg.omega)


def _sdp_pass(cfg: ScenarioConfig, inst: RisLiftedInstance, gamma_rhs: float):
    """Solve the relaxation linearized at inst.q0; (Q*, status-or-None)."""
    n = inst.q0.shape[0]
    s0 = bilinear_sense(inst, inst.q0)

    prog = ConicProgram("ris")
    Q = prog.variable("Q", (n, n), hermitian=True)
    cons = [Q >> 0, cp.diag(Q) == 1.0]

    def power(gram, vec):
        # x^H Q x through the defining vector when the form is known
        # rank one; a four-matrix trace chain canonicalizes quadratically
        # worse and dominates build time from a few dozen reflectors up
        if vec is None:
            return cp.real(cp.trace(gram @ Q))
        return cp.real(vec.conj() @ Q @ vec)

    if cfg.gamma_sense > 0:
        # affine Cauchy-Schwarz restriction, normalized by its value at q0
        vl, vr = inst.v_sense_left, inst.v_sense_right
        if vl is not None and vr is not None:
            kappa = complex(vr.conj() @ inst.q0 @ vl)
            cross = cp.real((vl.conj() @ Q @ vr) * kappa)
        else:
            cross = cp.real(cp.trace(inst.sense_left @ Q @ inst.sense_right @ inst.q0))
        cons.append(cross / s0 >= np.sqrt(gamma_rhs / s0))
    prog.add(*cons)

    useful = power(inst.f_useful, inst.v_useful) / cfg.noise_power
    eve = power(inst.f_eve, inst.v_eve) / cfg.noise_power
    target = power(inst.f_target, inst.v_target) / cfg.noise_power
    u0, e0, t0 = objective_terms(cfg, inst, inst.q0)
    lin = (
        cfg.omega * eve / (LN2 * (1.0 + e0))
        + (1.0 - cfg.omega) * target / (LN2 * (1.0 + t0))
    )
    # state the gain with an argument equal to 1 at the expansion point;
    # raw received powers span decades and starve the splitting backend
    ku = 1.0 + u0
    gain = (np.log(ku) + cp.log((1.0 + useful) / ku)) / LN2
    prog.maximize(gain - lin)

    result = solve(prog, Tolerances(), backend=cfg.solver_backend)
    if not result.ok and cfg.solver_backend != "scs":
        # retry loosely: the result only seeds rank projection and an exact
        # value re-check, and the splitting backend at 1e-8 can grind for
        # tens of seconds on instances the interior point already gave up on
        result = solve(prog, Tolerances(1e-6, 1e-6), backend="scs")
    if not result.ok:
        return None, result.status
    q_star = np.asarray(result.values["Q"])
    return 0.5 * (q_star + q_star.conj().T), None


def solve_ris(
    cfg: ScenarioConfig,
    snap: ChannelSnapshot,
    w,
    u,
    theta0,
    delta_e=None,
    delta_t=None,
    rank_tol: float = RANK_TOL,
) -> RisResult:
    """Relinearize-and-solve until stall, with rank-one recovery and a
    never-worse guard on the clamped weighted secrecy value."""
    theta_cur = np.asarray(theta0, dtype=complex)
    best_val = _clamped_value(cfg, snap, w, theta_cur, u, delta_e, delta_t)
    gamma_rhs = cfg.gamma_sense * float(np.vdot(u, u).real) * cfg.noise_power

    def sensing_ok(theta) -> bool:
        if cfg.gamma_sense == 0.0:
            return True
        return snr_echo(cfg, snap, w, theta, u) >= cfg.gamma_sense * (1.0 - 1e-9)

    flags: list = []
    any_accept = False
    ratio, q_last = 1.0, None

    for _ in range(cfg.sca_max_iters):
        inst = build_instance(cfg, snap, w, u, theta_cur, delta_e, delta_t)
        if q_last is None:
            q_last = inst.q0
        if cfg.gamma_sense > 0 and bilinear_sense(inst, inst.q0) <= 0.0:
            flags.append("sensing-degenerate")
            break
        q_star, fail = _sdp_pass(cfg, inst, gamma_rhs)
        if fail is not None:
            flags.append(f"solver-{fail}")
            break
        q_last = q_star
        vals, vecs = np.linalg.eigh(q_star)
        ratio = float(vals[-1] / max(np.sum(np.abs(vals)), 1e-300))

        candidates = []
        if ratio >= 1.0 - rank_tol:
            candidates.append(_project_phases(vecs[:, -1]))
        else:
            if "rank-fallback" not in flags:
                flags.append("rank-fallback")
            rng = np.random.default_rng(cfg.seed + snap.slot)
            n = inst.q0.shape[0]
            root = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
            for _ in range(RANDOMIZATION_DRAWS):
                g = rng.standard_normal(n) + 1j * rng.standard_normal(n)
                candidates.append(_project_phases(root @ g / np.sqrt(2.0)))

        step_theta, step_val = None, best_val
        for theta in candidates:
            if not sensing_ok(theta):
                continue
            val = _clamped_value(cfg, snap, w, theta, u, delta_e, delta_t)
            if val > step_val:
                step_theta, step_val = theta, val

        if step_theta is None:
            break
        improved = step_val - best_val
        theta_cur, best_val = step_theta, step_val
        any_accept = True
        if improved < cfg.sca_tol:
            break

    if not any_accept:
        flags.append("kept-previous")
    return RisResult(theta_cur, best_val, any_accept, ratio, q_last, flags)
