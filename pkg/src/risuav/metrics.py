"""SNRs, secrecy rates, and constraint certification.

Single source of truth for the objective: every optimizer block reports
progress through `evaluate`, never through its own surrogate value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import robust_csi
from .channel import ChannelSnapshot
from .scenario import Position3, ScenarioConfig


class MetricsError(Exception):
    pass


@dataclass
class SolutionState:
    """All decision variables across the S slots."""

    waypoints: list          # Position3 per slot
    w: list                  # complex N_t beamformer per slot
    theta: list              # complex N_R unit-modulus phases per slot
    u: list                  # complex N_t unit-norm combiner per slot

    def copy(self) -> "SolutionState":
        return SolutionState(
            waypoints=list(self.waypoints),
            w=[np.array(x) for x in self.w],
            theta=[np.array(x) for x in self.theta],
            u=[np.array(x) for x in self.u],
        )


@dataclass
class RateReport:
    snr_iot: np.ndarray
    snr_eve: np.ndarray
    snr_ut: np.ndarray
    snr_echo: np.ndarray
    r_sec_eve: np.ndarray
    r_sec_ut: np.ndarray
    r_sum: np.ndarray
    avg: float
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "snr_iot": self.snr_iot.tolist(),
            "snr_eve": self.snr_eve.tolist(),
            "snr_ut": self.snr_ut.tolist(),
            "snr_echo": self.snr_echo.tolist(),
            "r_sec_eve": self.r_sec_eve.tolist(),
            "r_sec_ut": self.r_sec_ut.tolist(),
            "r_sum": self.r_sum.tolist(),
            "avg": self.avg,
            "flags": list(self.flags),
        }


def _check_dims(cfg: ScenarioConfig, snap: ChannelSnapshot, w, theta, u=None) -> None:
    if np.shape(w) != (cfg.n_tx,):
        raise MetricsError(f"w must have shape ({cfg.n_tx},)")
    if np.shape(theta) != (cfg.n_ris,):
        raise MetricsError(f"theta must have shape ({cfg.n_ris},)")
    if u is not None and np.shape(u) != (cfg.n_tx,):
        raise MetricsError(f"u must have shape ({cfg.n_tx},)")


def _iot_signal(snap: ChannelSnapshot, w, theta) -> complex:
    cascade = snap.h_rd.conj() @ (np.asarray(theta) * (snap.H_ur @ w))
    direct = np.vdot(snap.h_ud, w)
    return snap.L_ud * direct + snap.L_urd * cascade


def snr_iot(cfg: ScenarioConfig, snap: ChannelSnapshot, w, theta) -> float:
    """Received SNR at the IoT device: direct plus reflected path."""
    _check_dims(cfg, snap, w, theta)
    return float(np.abs(_iot_signal(snap, w, theta)) ** 2 / cfg.noise_power)


def snr_eve(cfg: ScenarioConfig, snap: ChannelSnapshot, w, theta) -> float:
    """Nominal (unperturbed) intercept SNR at Eve."""
    _check_dims(cfg, snap, w, theta)
    cascade = snap.h_re.conj() @ (np.asarray(theta) * (snap.H_ur @ w))
    direct = np.vdot(snap.h_ue, w)
    sig = snap.L_ue * direct + snap.L_ure * cascade
    return float(np.abs(sig) ** 2 / cfg.noise_power)


def snr_ut_intercept(cfg: ScenarioConfig, snap: ChannelSnapshot, w, theta) -> float:
    """Intercept SNR at the sensing target (reflected path only)."""
    _check_dims(cfg, snap, w, theta)
    cascade = snap.h_rt.conj() @ (np.asarray(theta) * (snap.H_ur @ w))
    return float(np.abs(snap.L_urt * cascade) ** 2 / cfg.noise_power)


def echo_matrix(snap: ChannelSnapshot, theta) -> np.ndarray:
    """Round-trip response L_urt^2 H_ur^H Theta A_rt Theta H_ur."""
    Theta = np.diag(np.asarray(theta, dtype=complex))
    return snap.L_urt**2 * snap.H_ur.conj().T @ Theta @ snap.A_rt @ Theta @ snap.H_ur


def snr_echo(cfg: ScenarioConfig, snap: ChannelSnapshot, w, theta, u) -> float:
    """Radar echo SNR after receive combining."""
    _check_dims(cfg, snap, w, theta, u)
    u = np.asarray(u, dtype=complex)
    nrm = float(np.vdot(u, u).real)
    if nrm == 0:
        raise MetricsError("u must be nonzero")
    val = np.vdot(u, echo_matrix(snap, theta) @ w)
    return float(np.abs(val) ** 2 / (nrm * cfg.noise_power))


def secrecy_rates(
    cfg: ScenarioConfig,
    snap: ChannelSnapshot,
    w,
    theta,
    delta_e=None,
    delta_t=None,
) -> tuple:
    """Per-slot clamped secrecy rates against Eve and against the UT.

    Eavesdropper SNRs go through the lifted form so CSI perturbations apply
    directly; delta=None means nominal channels.
    """
    _check_dims(cfg, snap, w, theta)
    iot = snr_iot(cfg, snap, w, theta)
    lift_e = robust_csi.lift(snap, w, theta, "eve")
    lift_t = robust_csi.lift(snap, w, theta, "ut")
    eve = robust_csi.intercept_gain(lift_e, delta_e) / cfg.noise_power
    ut = robust_csi.intercept_gain(lift_t, delta_t) / cfg.noise_power
    r_ud = np.log2(1.0 + iot)
    r_e = max(r_ud - np.log2(1.0 + eve), 0.0)
    r_t = max(r_ud - np.log2(1.0 + ut), 0.0)
    return r_e, r_t


def weighted_sum(r_sec_eve: float, r_sec_ut: float, omega: float) -> float:
    if not (0.0 <= omega <= 1.0):
        raise MetricsError("0 <= omega <= 1")
    return omega * r_sec_eve + (1.0 - omega) * r_sec_ut


# constraint certification: raw definitional checks, shared by evaluate and
# by the acceptance suite; positive margin = satisfied
def certify_solution(cfg: ScenarioConfig, snaps, sol: SolutionState, tol: float = 1e-6) -> dict:
    S = cfg.n_slots
    if not (len(snaps) == len(sol.waypoints) == len(sol.w) == len(sol.theta) == len(sol.u) == S):
        raise MetricsError("solution/snapshot lengths must equal n_slots")
    D = cfg.max_step

    ris_dev = max(
        float(np.max(np.abs(np.abs(np.asarray(th)) - 1.0))) for th in sol.theta
    )
    comb_dev = max(abs(float(np.linalg.norm(u)) - 1.0) for u in sol.u)

    hops = [
        float(np.linalg.norm(sol.waypoints[s + 1].xy - sol.waypoints[s].xy))
        for s in range(S - 1)
    ]
    hop_margin = min((D - h for h in hops), default=D)
    start_dev = float(np.linalg.norm(sol.waypoints[0].xy - cfg.uav_start.xy))
    final_margin = D - float(np.linalg.norm(sol.waypoints[-1].xy - cfg.uav_final.xy))

    powers = [float(np.vdot(w, w).real) for w in sol.w]
    avg_margin = cfg.p_avg - sum(powers) / S
    peak_margin = min(cfg.p_peak - p for p in powers)

    echo_margin = min(
        snr_echo(cfg, snaps[s], sol.w[s], sol.theta[s], sol.u[s]) - cfg.gamma_sense
        for s in range(S)
    )

    margins = {
        "ris_modulus": -ris_dev,
        "hop": hop_margin,
        "endpoint_start": -start_dev,
        "endpoint_final": final_margin,
        "avg_power": avg_margin,
        "peak_power": peak_margin,
        "echo_snr": echo_margin,
        "combiner_norm": -comb_dev,
    }
    margins["ok"] = all(v >= -tol for k, v in margins.items() if k != "ok")
    return margins


def evaluate(cfg: ScenarioConfig, snaps, sol: SolutionState, worst_case: bool = False) -> RateReport:
    """Full rate report over all slots; Algorithm progress is read from .avg.

    With worst_case set, each slot's Eve/UT channels are perturbed by the
    closed-form ball maximizer before rates are computed.
    """
    S = cfg.n_slots
    snr_i = np.zeros(S)
    snr_e = np.zeros(S)
    snr_t = np.zeros(S)
    snr_ec = np.zeros(S)
    rse = np.zeros(S)
    rst = np.zeros(S)
    rsum = np.zeros(S)
    for s in range(S):
        snap, w, th, u = snaps[s], sol.w[s], sol.theta[s], sol.u[s]
        de = dt = None
        if worst_case:
            de = robust_csi.worst_case(robust_csi.lift(snap, w, th, "eve", cfg.eps_eve)).delta
            dt = robust_csi.worst_case(robust_csi.lift(snap, w, th, "ut", cfg.eps_ut)).delta
        lift_e = robust_csi.lift(snap, w, th, "eve")
        lift_t = robust_csi.lift(snap, w, th, "ut")
        snr_i[s] = snr_iot(cfg, snap, w, th)
        snr_e[s] = robust_csi.intercept_gain(lift_e, de) / cfg.noise_power
        snr_t[s] = robust_csi.intercept_gain(lift_t, dt) / cfg.noise_power
        snr_ec[s] = snr_echo(cfg, snap, w, th, u)
        rse[s], rst[s] = secrecy_rates(cfg, snap, w, th, de, dt)
        rsum[s] = weighted_sum(rse[s], rst[s], cfg.omega)

    margins = certify_solution(cfg, snaps, sol)
    flags = [k for k, v in margins.items() if k != "ok" and v < -1e-6]
    return RateReport(
        snr_iot=snr_i,
        snr_eve=snr_e,
        snr_ut=snr_t,
        snr_echo=snr_ec,
        r_sec_eve=rse,
        r_sec_ut=rst,
        r_sum=rsum,
        avg=float(np.mean(rsum)),
        flags=flags,
    )
