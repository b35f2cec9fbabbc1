"""Waypoint step: successive convex approximation over the UAV path.

Small-scale fading is frozen; moving a waypoint changes only distances and
the path losses built from them. Received signals factor into a
position-only bracket [d_direct^(-kappa/2), d_ur^(-alpha/2)] times a
composite vector psi that is independent of position, so per-slot slacks
stand in for SNRs and amplitude factors:

    z1..z3   received SNRs (IoT kept as a log, intercepts linearized)
    z4, z5   amplitude factors of the IoT bracket
    z6..z9   amplitude factors of the intercept brackets, bounded from above

Inside the conic program every slack is normalized by its expansion value
(amplitudes by the current amplitude, SNRs by a no-cancellation power scale)
so the solver works near 1.0; reported slacks are read off their defining
relations on the returned path. Distance-to-slack conversions use tangents
of the convex pieces, exact at the expansion point and one-sided away from
it. Signed path combinations get sign-aware treatment: each IoT slack is
capped on the side its tangent coefficient favors, and an intercept whose
two paths interfere destructively is boxed between amplitude caps and
dominated at the box vertices, where a convex quadratic peaks. A secrecy
term already clamped to zero at the expansion point is held at zero, the
valid minorant at the kink. The program objective therefore minorizes the
true clamped objective everywhere and touches it at the expansion point, so
accepted steps cannot decrease the true objective; an accept/reject guard
with step damping stays as a safety net against solver inaccuracy. The
sensing constraint reduces to a disc around the reflector: with fading
frozen, position enters the echo only through the UAV-reflector distance
power, so the disc enforces the true constraint exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .channel import ChannelSnapshot
from .conic import ConicProgram, Tolerances, solve
from .metrics import SolutionState, secrecy_rates, snr_echo, weighted_sum
from .scenario import Position3, ScenarioConfig

LN2 = float(np.log(2.0))

# companion node and distance exponent for each amplitude slack
_SLACK_GEOM = {
    4: ("iot", "kappa"),
    5: ("ris", "alpha"),
    6: ("eve", "kappa"),
    7: ("ris", "alpha"),
    8: ("ut", "kappa"),
    9: ("ris", "alpha"),
}


def build_psi(cfg: ScenarioConfig, snap: ChannelSnapshot, w, theta, delta_e=None, delta_t=None):
    """Position-independent composite vectors (IoT, eavesdropper, sensed user).

    Each pairs with the bracket [d_direct^(-kappa/2), d_ur^(-alpha/2)]; the
    frozen CSI perturbations ride along inside the entries. The sensed user
    has no direct link, so its first entry is zero.
    """
    w = np.asarray(w, dtype=complex)
    theta = np.asarray(theta, dtype=complex)
    n_ris = snap.H_ur.shape[0]
    d_r = np.zeros(n_ris, dtype=complex) if delta_e is None else np.asarray(delta_e)[:n_ris]
    d_direct = 0.0 if delta_e is None else complex(np.asarray(delta_e)[n_ris])
    d_t = np.zeros(n_ris, dtype=complex) if delta_t is None else np.asarray(delta_t)

    root_rho = np.sqrt(cfg.rho)
    ris_hop = theta * (snap.H_ur @ w)
    psi1 = np.array([
        root_rho * (snap.h_ud.conj() @ w),
        root_rho * snap.d_rd ** (-cfg.alpha / 2) * (snap.h_rd.conj() @ ris_hop),
    ])
    psi2 = np.array([
        root_rho * ((snap.h_ue.conj() @ w) + np.conj(d_direct)),
        root_rho * snap.d_re ** (-cfg.alpha / 2) * ((snap.h_re + d_r).conj() @ ris_hop),
    ])
    psi3 = np.array([
        0.0,
        root_rho * snap.d_rt ** (-cfg.alpha / 2) * ((snap.h_rt + d_t).conj() @ ris_hop),
    ])
    return psi1, psi2, psi3


def gamma_t(cfg: ScenarioConfig, snap: ChannelSnapshot, w, theta, u) -> float:
    """Sensing threshold folded onto the UAV-reflector distance power.

    The echo constraint holds iff d_ur^(-2 alpha) >= gamma_t; everything
    position-independent (static second hop, small-scale product, combiner
    norm) is folded into the constant. Infinity marks a vanished echo path.
    """
    if cfg.gamma_sense == 0.0:
        return 0.0
    theta_m = np.diag(np.asarray(theta, dtype=complex))
    core = snap.H_ur.conj().T @ theta_m @ snap.A_rt @ theta_m @ snap.H_ur
    x = complex(np.asarray(u, dtype=complex).conj() @ core @ np.asarray(w, dtype=complex))
    denom = cfg.rho**2 * snap.d_rt ** (-2.0 * cfg.alpha) * abs(x) ** 2
    if denom == 0.0:
        return np.inf
    u_norm2 = float(np.vdot(u, u).real)
    return cfg.gamma_sense * u_norm2 * cfg.noise_power / denom


def quad_tangent(psi_a: complex, psi_b: complex, a0: float, b0: float):
    """Affine tangent of |a psi_a + b psi_b|^2 at (a0, b0): (c0, ca, cb).

    The quadratic is convex, so the tangent is a global lower bound with
    equality at the expansion point.
    """
    aa = abs(psi_a) ** 2
    bb = abs(psi_b) ** 2
    cross = float(np.real(np.conj(psi_a) * psi_b))
    f0 = aa * a0**2 + bb * b0**2 + 2.0 * cross * a0 * b0
    ca = 2.0 * (a0 * aa + b0 * cross)
    cb = 2.0 * (b0 * bb + a0 * cross)
    return -f0, ca, cb


def power_tangent(z0: float, expo: float):
    """Affine tangent of z^expo at z0: (c0, slope); global lower bound for
    convex branches (negative exponents on z > 0)."""
    if z0 <= 0:
        raise ValueError("tangent point must be positive")
    slope = expo * z0 ** (expo - 1.0)
    return z0**expo - slope * z0, slope


@dataclass
class TrajResult:
    waypoints: list
    trace: list
    ok: bool
    flags: list
    n_iters: int
    slacks: dict | None = None


def _defining_slacks(cfg: ScenarioConfig, psis, snaps_pos, wps) -> dict:
    """Slack values read off their defining relations at the given path."""
    out = {k: np.zeros(cfg.n_slots) for k in range(1, 10)}
    for s in range(cfg.n_slots):
        snp = snaps_pos[s]
        d_ut = float(np.linalg.norm(wps[s].vec - cfg.ut_pos.vec))
        amps = {
            4: snp.d_ud ** (-cfg.kappa / 2),
            5: snp.d_ur ** (-cfg.alpha / 2),
            6: snp.d_ue ** (-cfg.kappa / 2),
            7: snp.d_ur ** (-cfg.alpha / 2),
            8: d_ut ** (-cfg.kappa / 2),
            9: snp.d_ur ** (-cfg.alpha / 2),
        }
        for k, v in amps.items():
            out[k][s] = v
        p1, p2, p3 = psis[s]
        out[1][s] = abs(amps[4] * p1[0] + amps[5] * p1[1]) ** 2 / cfg.noise_power
        out[2][s] = abs(amps[6] * p2[0] + amps[7] * p2[1]) ** 2 / cfg.noise_power
        out[3][s] = abs(amps[8] * p3[0] + amps[9] * p3[1]) ** 2 / cfg.noise_power
    return out


def _true_value(cfg: ScenarioConfig, snaps_pos, sol: SolutionState, deltas) -> float:
    total = 0.0
    for s in range(cfg.n_slots):
        de, dt = deltas[s] if deltas is not None else (None, None)
        r_e, r_t = secrecy_rates(cfg, snaps_pos[s], sol.w[s], sol.theta[s], de, dt)
        total += weighted_sum(r_e, r_t, cfg.omega)
    return total / cfg.n_slots


def solve_trajectory(cfg: ScenarioConfig, snaps, sol: SolutionState, deltas=None) -> TrajResult:
    """Iterate the convex waypoint program with a true-objective guard."""
    S = cfg.n_slots
    z_u = sol.waypoints[0].z
    wp_cur = list(sol.waypoints)
    snaps_cur = [snaps[s].with_position(cfg, wp_cur[s]) for s in range(S)]
    val_cur = _true_value(cfg, snaps_cur, sol, deltas)
    trace = [val_cur]
    flags: list = []

    psis = []
    for s in range(S):
        de, dt = deltas[s] if deltas is not None else (None, None)
        psis.append(build_psi(cfg, snaps_cur[s], sol.w[s], sol.theta[s], de, dt))

    radius2 = None
    if cfg.gamma_sense > 0:
        gts = [gamma_t(cfg, snaps_cur[s], sol.w[s], sol.theta[s], sol.u[s]) for s in range(S)]
        if any(not np.isfinite(g) for g in gts):
            return TrajResult(wp_cur, trace, False, ["sensing-degenerate"], 0)
        radius2 = [g ** (-1.0 / cfg.alpha) - (z_u - cfg.ris_pos.z) ** 2 for g in gts]
        if any(r <= 0 for r in radius2):
            return TrajResult(wp_cur, trace, False, ["sensing-infeasible"], 0)

    sigma = np.sqrt(cfg.noise_power)
    nodes = {
        "iot": (cfg.iot_pos.xy, (z_u - cfg.iot_pos.z) ** 2),
        "eve": (cfg.eve_pos.xy, (z_u - cfg.eve_pos.z) ** 2),
        "ut": (cfg.ut_pos.xy, (z_u - cfg.ut_pos.z) ** 2),
        "ris": (cfg.ris_pos.xy, (z_u - cfg.ris_pos.z) ** 2),
    }
    last_slacks = None

    for _ in range(cfg.sca_max_iters):
        prog = ConicProgram("trajectory")
        P = prog.variable("P", (S, 2))
        z = {k: prog.variable(f"z{k}", (S,), nonneg=True) for k in range(1, 10)}
        zl = {k: prog.variable(f"z{k}l", (S,), nonneg=True) for k in (6, 7)}
        cons = []
        objective = 0

        for s in range(S):
            p0 = wp_cur[s]
            snap0 = snaps_cur[s]
            psi1, psi2, psi3 = (v / sigma for v in psis[s])
            d_ut0 = float(np.linalg.norm(p0.vec - cfg.ut_pos.vec))
            amp0 = {
                4: snap0.d_ud ** (-cfg.kappa / 2),
                5: snap0.d_ur ** (-cfg.alpha / 2),
                6: snap0.d_ue ** (-cfg.kappa / 2),
                7: snap0.d_ur ** (-cfg.alpha / 2),
                8: d_ut0 ** (-cfg.kappa / 2),
                9: snap0.d_ur ** (-cfg.alpha / 2),
            }
            # no-cancellation power scales keep SNR slacks near 1 even when
            # direct and reflected paths nearly cancel at the expansion point
            s1 = max((amp0[4] * abs(psi1[0]) + amp0[5] * abs(psi1[1])) ** 2, 1e-12)
            s2 = max((amp0[6] * abs(psi2[0]) + amp0[7] * abs(psi2[1])) ** 2, 1e-12)
            s3 = max((amp0[8] * abs(psi3[0]) + amp0[9] * abs(psi3[1])) ** 2, 1e-12)

            z10 = abs(amp0[4] * psi1[0] + amp0[5] * psi1[1]) ** 2
            z20 = abs(amp0[6] * psi2[0] + amp0[7] * psi2[1]) ** 2
            z30 = abs(amp0[8] * psi3[0] + amp0[9] * psi3[1]) ** 2

            # a secrecy term clamped to zero at the expansion point stays
            # zero in the surrogate; it cannot fall further, and holding it
            # keeps the surrogate touching the clamped objective
            active_e = np.log2(1.0 + z10) - np.log2(1.0 + z20) > 0.0
            active_t = np.log2(1.0 + z10) - np.log2(1.0 + z30) > 0.0
            w_iot = cfg.omega * active_e + (1.0 - cfg.omega) * active_t

            def cap_below(var, key, s=s):
                # normalized d^2 under the tangent of z^p at 1, forcing the
                # slack under the amplitude ratio
                node, expo_name = _SLACK_GEOM[key]
                xy0, dz2 = nodes[node]
                p = -4.0 / getattr(cfg, expo_name)
                d0_sq = amp0[key] ** p
                d2 = (cp.sum_squares(P[s] - xy0) + dz2) / d0_sq
                cons.append(d2 <= 1.0 + p * (var - 1.0))

            def cap_above(var, key, p0=p0, s=s):
                # tangent of normalized d^2 above z^p, forcing the slack
                # over the amplitude ratio
                node, expo_name = _SLACK_GEOM[key]
                xy0, dz2 = nodes[node]
                p = -4.0 / getattr(cfg, expo_name)
                d0_sq = amp0[key] ** p
                p0xy = p0.xy
                d2_lin = (
                    float(np.sum((p0xy - xy0) ** 2)) + dz2
                    + 2.0 * (p0xy - xy0) @ (P[s] - p0xy)
                ) / d0_sq
                cons.append(d2_lin >= cp.power(var, p))

            if w_iot > 0.0:
                # exact IoT log with the argument split so terms stay O(1)
                if s1 >= 1.0:
                    log_term = np.log2(s1) + cp.log(z[1][s] + 1.0 / s1) / LN2
                else:
                    log_term = cp.log(1.0 + s1 * z[1][s]) / LN2
                objective += w_iot * log_term
                # tangent lower bound of the bracket quadratic; each slack
                # is capped on the side its coefficient favors
                c0, ca, cb = quad_tangent(psi1[0], psi1[1], amp0[4], amp0[5])
                cons.append(
                    (c0 + ca * amp0[4] * z[4][s] + cb * amp0[5] * z[5][s]) / s1 >= z[1][s]
                )
                (cap_below if ca >= 0.0 else cap_above)(z[4][s], 4)
                (cap_below if cb >= 0.0 else cap_above)(z[5][s], 5)
            else:
                cons += [z[1][s] == z10 / s1, z[4][s] == 1.0, z[5][s] == 1.0]

            if active_e:
                objective -= cfg.omega * (
                    np.log2(1.0 + z20) + (s2 * z[2][s] - z20) / (LN2 * (1.0 + z20))
                )
                # with a cooperating cross term the upper caps alone give a
                # monotone exact cone; a destructive cross term needs the
                # amplitude box, and a convex quadratic peaks at a vertex
                coef6 = amp0[6] * psi2[0] / np.sqrt(s2)
                coef7 = amp0[7] * psi2[1] / np.sqrt(s2)
                box_eve = float(np.real(np.conj(psi2[0]) * psi2[1])) < 0.0
                if box_eve:
                    for x in (z[6][s], zl[6][s]):
                        for y in (z[7][s], zl[7][s]):
                            cons.append(cp.square(cp.abs(x * coef6 + y * coef7)) <= z[2][s])
                else:
                    cons.append(
                        cp.square(cp.abs(z[6][s] * coef6 + z[7][s] * coef7)) <= z[2][s]
                    )
                    cons += [zl[6][s] == 1.0, zl[7][s] == 1.0]
                for key, psi_entry in ((6, psi2[0]), (7, psi2[1])):
                    if psi_entry == 0.0:
                        # this path contributes nothing; pin its slack so no
                        # free direction is left
                        cons.append(z[key][s] == 1.0)
                    else:
                        cap_above(z[key][s], key)
                        if box_eve:
                            cap_below(zl[key][s], key)
            else:
                cons += [
                    z[2][s] == z20 / s2, z[6][s] == 1.0, z[7][s] == 1.0,
                    zl[6][s] == 1.0, zl[7][s] == 1.0,
                ]

            if active_t:
                objective -= (1.0 - cfg.omega) * (
                    np.log2(1.0 + z30) + (s3 * z[3][s] - z30) / (LN2 * (1.0 + z30))
                )
                # the sensed-user bracket has no direct path, so its cross
                # term vanishes and the single cone is exact
                coef8 = amp0[8] * psi3[0] / np.sqrt(s3)
                coef9 = amp0[9] * psi3[1] / np.sqrt(s3)
                cons.append(cp.square(cp.abs(z[8][s] * coef8 + z[9][s] * coef9)) <= z[3][s])
                for key, psi_entry in ((8, psi3[0]), (9, psi3[1])):
                    if psi_entry == 0.0:
                        cons.append(z[key][s] == 1.0)
                    else:
                        cap_above(z[key][s], key)
            else:
                cons += [z[3][s] == z30 / s3, z[8][s] == 1.0, z[9][s] == 1.0]

            if radius2 is not None:
                ris_xy, _ = nodes["ris"]
                cons.append(cp.sum_squares(P[s] - ris_xy) / radius2[s] <= 1.0)

        cons.append(P[0] == cfg.uav_start.xy)
        for s in range(S - 1):
            cons.append(cp.norm(P[s + 1] - P[s]) <= cfg.max_step)
        cons.append(cp.norm(P[S - 1] - cfg.uav_final.xy) <= cfg.max_step)

        prog.add(*cons)
        prog.maximize(objective / S)
        result = solve(prog, Tolerances(), backend=cfg.solver_backend)
        if not result.ok and cfg.solver_backend != "scs":
            # the interior-point backend occasionally gives up on these
            # programs; the splitting backend is slower but sturdier, and the
            # guard below vets whatever it returns
            result = solve(prog, Tolerances(), backend="scs")
        if not result.ok:
            flags.append(f"solver-{result.status}")
            return TrajResult(wp_cur, trace, False, flags, len(trace) - 1, last_slacks)

        pts = np.asarray(result.values["P"], dtype=float)
        # snap solver rounding back onto the exact mobility set; convex
        # combinations with the (exact) expansion path then stay inside it
        pts[0] = cfg.uav_start.xy
        final_xy = np.asarray(cfg.uav_final.xy, dtype=float)
        gap = pts[S - 1] - final_xy
        gap_n = float(np.linalg.norm(gap))
        if gap_n > cfg.max_step:
            pts[S - 1] = final_xy + gap * (cfg.max_step / gap_n)
        for s in range(1, S):
            step = pts[s] - pts[s - 1]
            step_n = float(np.linalg.norm(step))
            if step_n > cfg.max_step:
                pts[s] = pts[s - 1] + step * (cfg.max_step / step_n)
        pts0 = np.array([[p.x, p.y] for p in wp_cur])

        # the surrogate minorizes the true objective, so the full step should
        # already improve it; damping only absorbs solver inaccuracy
        accepted = False
        for t in (1.0, 0.5, 0.25):
            pts_t = pts0 + t * (pts - pts0)
            wp_new = [Position3(float(pts_t[s, 0]), float(pts_t[s, 1]), z_u) for s in range(S)]
            snaps_new = [snaps_cur[s].with_position(cfg, wp_new[s]) for s in range(S)]
            val_new = _true_value(cfg, snaps_new, sol, deltas)
            sensing_holds = cfg.gamma_sense == 0.0 or all(
                snr_echo(cfg, snaps_new[s], sol.w[s], sol.theta[s], sol.u[s])
                >= cfg.gamma_sense * (1.0 - 1e-4)
                for s in range(S)
            )
            if sensing_holds and val_new >= val_cur - 1e-12:
                accepted = True
                break
        if not accepted:
            flags.append("step-rejected")
            break

        improved = val_new - val_cur
        wp_cur, snaps_cur, val_cur = wp_new, snaps_new, val_new
        trace.append(val_new)
        last_slacks = _defining_slacks(cfg, psis, snaps_cur, wp_cur)
        if improved < cfg.sca_tol:
            break

    # the guard never accepts a step that breaks sensing, so a violation
    # here means the starting path broke it and no recovering step was found
    if cfg.gamma_sense > 0.0 and any(
        snr_echo(cfg, snaps_cur[s], sol.w[s], sol.theta[s], sol.u[s])
        < cfg.gamma_sense * (1.0 - 1e-4)
        for s in range(S)
    ):
        flags.append("sensing-violated")
        return TrajResult(wp_cur, trace, False, flags, len(trace) - 1, last_slacks)

    return TrajResult(wp_cur, trace, True, flags, len(trace) - 1, last_slacks)
