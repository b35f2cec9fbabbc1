"""Per-slot channel synthesis.

Geometry convention for line-of-sight components: every array (UAV transmit
array, RIS panel) is a ULA along the x axis with half-wavelength spacing, so
the phase increment toward a point at unit direction (ux, uy, uz) is pi*ux.
The model only needs unit-modulus LoS vectors consistent with geometry; all
downstream math treats the drawn channels as constants.

Small-scale fading is drawn once per (seed, slot) stream and then frozen, so
a snapshot is a pure function of (cfg, uav_pos, slot, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .scenario import Position3, ScenarioConfig


class ChannelError(Exception):
    """Degenerate geometry (coincident nodes) or bad channel inputs."""


def path_loss_direct(dist: float, kappa: float, rho: float) -> float:
    """Amplitude gain sqrt(rho * dist^-kappa) of a direct link."""
    if dist <= 0:
        raise ChannelError("direct-link distance must be positive")
    return float(np.sqrt(rho * dist ** (-kappa)))


def path_loss_cascaded(d1: float, d2: float, alpha: float, rho: float) -> float:
    """Amplitude gain sqrt(rho * (d1*d2)^-alpha) of a two-hop reflected link."""
    if d1 <= 0 or d2 <= 0:
        raise ChannelError("cascaded-link distances must be positive")
    return float(np.sqrt(rho * (d1 * d2) ** (-alpha)))


def steering_vector(n: int, phase_arg: float) -> np.ndarray:
    """ULA steering vector [exp(j*k*phase_arg)]_{k=0..n-1}."""
    return np.exp(1j * phase_arg * np.arange(n))


def rician_channel(los: np.ndarray, beta: float, rng: np.random.Generator) -> np.ndarray:
    """Mix a unit-modulus LoS component with circular Gaussian scatter.

    h = sqrt(beta/(1+beta)) * los + sqrt(1/(1+beta)) * h_nlos, with h_nlos
    i.i.d. CN(0, 1).
    """
    los = np.asarray(los, dtype=complex)
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / np.sqrt(2.0)
    return np.sqrt(beta / (1.0 + beta)) * los + np.sqrt(1.0 / (1.0 + beta)) * nlos


def target_response(alpha_s: complex, a: np.ndarray) -> np.ndarray:
    """Rank-1 target response alpha_s * a a^H seen across the RIS aperture."""
    a = np.asarray(a, dtype=complex)
    if np.allclose(a, 0):
        raise ChannelError("steering vector must be nonzero")
    return alpha_s * np.outer(a, a.conj())


def _unit_direction(src: Position3, dst: Position3) -> np.ndarray:
    d = dst.vec - src.vec
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ChannelError("coincident nodes give a zero-length link")
    return d / norm


def _phase_arg(src: Position3, dst: Position3) -> float:
    # x-axis ULA: phase increment is pi times the x direction cosine
    return float(np.pi * _unit_direction(src, dst)[0])


@dataclass(frozen=True)
class ChannelSnapshot:
    """All channels, gains, and distances of one time slot."""

    slot: int
    uav_pos: Position3
    H_ur: np.ndarray      # N_R x N_t, UAV array -> RIS panel
    h_ud: np.ndarray      # N_t, UAV -> IoT
    h_ue: np.ndarray      # N_t, UAV -> Eve
    h_rd: np.ndarray      # N_R, RIS -> IoT
    h_re: np.ndarray      # N_R, RIS -> Eve
    h_rt: np.ndarray      # N_R, RIS -> UT
    a: np.ndarray         # N_R, steering toward the sensing target
    A_rt: np.ndarray      # N_R x N_R target response
    L_ud: float
    L_ue: float
    L_urd: float
    L_ure: float
    L_urt: float
    d_ud: float
    d_ue: float
    d_ur: float
    d_rd: float
    d_re: float
    d_rt: float

    def with_position(self, cfg: ScenarioConfig, uav_pos: Position3) -> "ChannelSnapshot":
        """Move the UAV while keeping every small-scale realization frozen.

        Only the UAV-dependent distances and path losses change; fading and
        the RIS-side geometry stay fixed. Used by the trajectory step, which
        treats fading as constant while waypoints move.
        """
        d_ud = _distance(uav_pos, cfg.iot_pos)
        d_ue = _distance(uav_pos, cfg.eve_pos)
        d_ur = _distance(uav_pos, cfg.ris_pos)
        return replace(
            self,
            uav_pos=uav_pos,
            d_ud=d_ud,
            d_ue=d_ue,
            d_ur=d_ur,
            L_ud=path_loss_direct(d_ud, cfg.kappa, cfg.rho),
            L_ue=path_loss_direct(d_ue, cfg.kappa, cfg.rho),
            L_urd=path_loss_cascaded(d_ur, self.d_rd, cfg.alpha, cfg.rho),
            L_ure=path_loss_cascaded(d_ur, self.d_re, cfg.alpha, cfg.rho),
            L_urt=path_loss_cascaded(d_ur, self.d_rt, cfg.alpha, cfg.rho),
        )


def _distance(p: Position3, q: Position3) -> float:
    d = float(np.linalg.norm(p.vec - q.vec))
    if d == 0:
        raise ChannelError("coincident nodes give a zero-length link")
    return d


def slot_rng(seed: int, slot: int) -> np.random.Generator:
    """Independent, reproducible stream for one slot."""
    return np.random.default_rng(np.random.SeedSequence(entropy=(int(seed), int(slot))))


def assemble_snapshot(
    cfg: ScenarioConfig,
    uav_pos: Position3,
    slot: int,
    seed: int | None = None,
) -> ChannelSnapshot:
    """Draw every channel of one slot from the (seed, slot) stream.

    Draw order is fixed (h_ud, h_ue, H_ur, h_rd, h_re, h_rt) so results are
    reproducible for a given seed regardless of caller bookkeeping.
    """
    rng = slot_rng(cfg.seed if seed is None else seed, slot)

    d_ud = _distance(uav_pos, cfg.iot_pos)
    d_ue = _distance(uav_pos, cfg.eve_pos)
    d_ur = _distance(uav_pos, cfg.ris_pos)
    d_rd = _distance(cfg.ris_pos, cfg.iot_pos)
    d_re = _distance(cfg.ris_pos, cfg.eve_pos)
    d_rt = _distance(cfg.ris_pos, cfg.ut_pos)

    los_ud = steering_vector(cfg.n_tx, _phase_arg(uav_pos, cfg.iot_pos))
    los_ue = steering_vector(cfg.n_tx, _phase_arg(uav_pos, cfg.eve_pos))
    # rank-1 LoS for the array-to-panel link: RIS steering times UAV steering
    los_ur = np.outer(
        steering_vector(cfg.n_ris, _phase_arg(cfg.ris_pos, uav_pos)),
        steering_vector(cfg.n_tx, _phase_arg(uav_pos, cfg.ris_pos)).conj(),
    )
    los_rd = steering_vector(cfg.n_ris, _phase_arg(cfg.ris_pos, cfg.iot_pos))
    los_re = steering_vector(cfg.n_ris, _phase_arg(cfg.ris_pos, cfg.eve_pos))
    los_rt = steering_vector(cfg.n_ris, _phase_arg(cfg.ris_pos, cfg.ut_pos))

    h_ud = rician_channel(los_ud, cfg.rician["ud"], rng)
    h_ue = rician_channel(los_ue, cfg.rician["ue"], rng)
    H_ur = rician_channel(los_ur, cfg.rician["ur"], rng)
    h_rd = rician_channel(los_rd, cfg.rician["rd"], rng)
    h_re = rician_channel(los_re, cfg.rician["re"], rng)
    h_rt = rician_channel(los_rt, cfg.rician["rt"], rng)

    a = los_rt  # the sensing target sits in the RIS->UT direction
    return ChannelSnapshot(
        slot=slot,
        uav_pos=uav_pos,
        H_ur=H_ur,
        h_ud=h_ud,
        h_ue=h_ue,
        h_rd=h_rd,
        h_re=h_re,
        h_rt=h_rt,
        a=a,
        A_rt=target_response(cfg.alpha_s, a),
        L_ud=path_loss_direct(d_ud, cfg.kappa, cfg.rho),
        L_ue=path_loss_direct(d_ue, cfg.kappa, cfg.rho),
        L_urd=path_loss_cascaded(d_ur, d_rd, cfg.alpha, cfg.rho),
        L_ure=path_loss_cascaded(d_ur, d_re, cfg.alpha, cfg.rho),
        L_urt=path_loss_cascaded(d_ur, d_rt, cfg.alpha, cfg.rho),
        d_ud=d_ud,
        d_ue=d_ue,
        d_ur=d_ur,
        d_rd=d_rd,
        d_re=d_re,
        d_rt=d_rt,
    )


def assemble_all(cfg: ScenarioConfig, waypoints, seed: int | None = None) -> list:
    """One snapshot per slot along a waypoint sequence."""
    return [
        assemble_snapshot(cfg, pos, s, seed=seed) for s, pos in enumerate(waypoints)
    ]


def snapshot_digest(snap: ChannelSnapshot) -> str:
    """Stable content hash over all arrays and scalars of a snapshot."""
    import hashlib

    h = hashlib.sha256()
    for arr in (snap.H_ur, snap.h_ud, snap.h_ue, snap.h_rd, snap.h_re, snap.h_rt, snap.a, snap.A_rt):
        h.update(np.ascontiguousarray(arr).tobytes())
    scalars = (
        snap.L_ud, snap.L_ue, snap.L_urd, snap.L_ure, snap.L_urt,
        snap.d_ud, snap.d_ue, snap.d_ur, snap.d_rd, snap.d_re, snap.d_rt,
    )
    h.update(np.array(scalars).tobytes())
    return h.hexdigest()[:16]


def dump_snapshot(snap: ChannelSnapshot, path: str) -> None:
    """Text dump, row-major, complex entries as re/im pairs."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"slot {snap.slot}\n")
        for name in ("H_ur", "h_ud", "h_ue", "h_rd", "h_re", "h_rt", "a", "A_rt"):
            arr = np.atleast_2d(getattr(snap, name))
            fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            for row in arr:
                fh.write(" ".join(f"{z.real!r} {z.imag!r}" for z in row) + "\n")
        for name in ("L_ud", "L_ue", "L_urd", "L_ure", "L_urt",
                     "d_ud", "d_ue", "d_ur", "d_rd", "d_re", "d_rt"):
            fh.write(f"{name} {getattr(snap, name)!r}\n")
