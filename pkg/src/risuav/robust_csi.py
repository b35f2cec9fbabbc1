"""Lifted eavesdropper/target channel forms and worst-case CSI perturbations.

The intercept SNRs factor as |(h_bar + delta)^H (H_lift c)|^2 / sigma^2 where
H_lift is diagonal, c is the reflector phase vector (with a trailing 1 for the
link that has a direct term), and delta lives in a euclidean ball of radius
eps around the nominal stacked channel. The worst case over the ball has a
closed form: align the perturbation with the effective signal vector and spend
the whole budget on the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSnapshot


class LiftError(Exception):
    pass


@dataclass(frozen=True)
class LiftedChannel:
    kind: str              # "eve" | "ut"
    H_lift: np.ndarray     # diagonal matrix, (N_R+1) for eve, N_R for ut
    h_bar: np.ndarray      # nominal stacked channel
    v_eff: np.ndarray      # phase vector; [theta; 1] for eve, theta for ut
    eps: float             # uncertainty ball radius

    @property
    def signal_vector(self) -> np.ndarray:
        """c = H_lift v_eff; the gain is |(h_bar+delta)^H c|^2."""
        return self.H_lift @ self.v_eff


def lift(
    snap: ChannelSnapshot,
    w: np.ndarray,
    theta: np.ndarray,
    kind: str,
    eps: float = 0.0,
) -> LiftedChannel:
    """Stack one slot's intercept link into diagonal-lift form."""
    w = np.asarray(w, dtype=complex)
    theta = np.asarray(theta, dtype=complex)
    n_ris, n_tx = snap.H_ur.shape
    if w.shape != (n_tx,) or theta.shape != (n_ris,):
        raise LiftError("w/theta dimensions do not match the snapshot")
    if eps < 0:
        raise LiftError("eps must be nonnegative")

    v = snap.H_ur @ w
    if kind == "eve":
        u_scal = np.vdot(snap.h_ue, w)  # h_ue^H w
        diag = np.concatenate([snap.L_ure * v, [snap.L_ue]])
        h_bar = np.concatenate([snap.h_re, [np.conj(u_scal)]])
        v_eff = np.concatenate([theta, [1.0]])
    elif kind == "ut":
        diag = snap.L_urt * v
        h_bar = snap.h_rt.astype(complex)
        v_eff = theta
    else:
        raise LiftError(f"unknown lift kind {kind!r}")
    return LiftedChannel(
        kind=kind, H_lift=np.diag(diag), h_bar=h_bar, v_eff=v_eff, eps=float(eps)
    )


def intercept_gain(lifted: LiftedChannel, delta: np.ndarray | None = None) -> float:
    """|(h_bar + delta)^H c|^2 before noise normalization."""
    h = lifted.h_bar if delta is None else lifted.h_bar + delta
    return float(np.abs(np.vdot(h, lifted.signal_vector)) ** 2)


@dataclass(frozen=True)
class WorstCasePerturbation:
    delta: np.ndarray
    attained_gain: float   # |(h_bar+delta)^H c|^2 at the returned delta
    degenerate: bool       # signal vector vanished; gain is delta-independent


def worst_case(lifted: LiftedChannel) -> WorstCasePerturbation:
    """Boundary perturbation maximizing the intercept gain over the ball.

    With c = H_lift v_eff, |(h+delta)^H c| <= |h^H c| + eps*||c|| by triangle
    plus Cauchy-Schwarz; delta = eps*(c/||c||)*exp(-j*arg(h^H c)) attains both
    with equality, so the bound is the exact ball maximum.
    """
    c = lifted.signal_vector
    norm_c = float(np.linalg.norm(c))
    eps = lifted.eps
    if eps == 0.0 or norm_c == 0.0:
        return WorstCasePerturbation(
            delta=np.zeros_like(lifted.h_bar),
            attained_gain=intercept_gain(lifted),
            degenerate=(norm_c == 0.0 and eps > 0.0),
        )
    inner = np.vdot(lifted.h_bar, c)  # h_bar^H c
    phi = 0.0 if inner == 0 else float(np.angle(inner))
    delta = eps * (c / norm_c) * np.exp(-1j * phi)
    attained = (np.abs(inner) + eps * norm_c) ** 2
    return WorstCasePerturbation(delta=delta, attained_gain=float(attained), degenerate=False)
