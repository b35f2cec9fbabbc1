"""Receive combiner step on the unit sphere.

The communication rates do not involve the combiner; only the echo power
u^H Omega u does, with Omega the rank-one Gram matrix of the round-trip
echo vector. The update majorizes the quadratic with its largest eigenvalue
and minimizes the majorant's linear part over the norm cap, the linearized
norm floor, and the majorized echo floor. The cap and the linearized floor
intersect in exactly one point, the expansion point (Cauchy-Schwarz forces
u = u0 from Re(u0^H u) >= 1 and ||u|| <= 1), so the program is solved
exactly: the expansion point when it meets the majorized floor, empty
otherwise. The step therefore holds the combiner wherever it already sits
on or above the floor, consistent with the echo power being pinned to the
floor at any optimum of the minimization; a dominant-eigenvector baseline
maximizes the echo outright and takes over whenever the program has no
solution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSnapshot
from .metrics import echo_matrix


class RxbfError(ValueError):
    pass


@dataclass
class EchoQuadratic:
    omega: np.ndarray        # rank-one Gram matrix of the echo vector
    lambda_max: float        # its only nonzero eigenvalue
    u0: np.ndarray | None = None


@dataclass
class MMStep:
    u: np.ndarray
    feasible: bool
    flags: list


def build_omega(snap: ChannelSnapshot, w, theta, u0=None) -> EchoQuadratic:
    g = echo_matrix(snap, theta) @ np.asarray(w, dtype=complex)
    omega = np.outer(g, g.conj())
    lam = float(np.vdot(g, g).real)
    return EchoQuadratic(omega, lam, None if u0 is None else np.asarray(u0, dtype=complex))


def echo_power(eq: EchoQuadratic, u) -> float:
    u = np.asarray(u, dtype=complex)
    return float(np.real(np.vdot(u, eq.omega @ u)))


def majorant_value(eq: EchoQuadratic, u) -> float:
    """Largest-eigenvalue majorant of the echo quadratic around u0.

    Upper-bounds u^H Omega u everywhere and touches it at u0; the step
    optimizes its non-constant part.
    """
    if eq.u0 is None:
        raise RxbfError("expansion point required")
    u = np.asarray(u, dtype=complex)
    lam, u0 = eq.lambda_max, eq.u0
    lin = np.real(np.vdot(u, (eq.omega - lam * np.eye(len(u0))) @ u0))
    const = np.real(np.vdot(u0, (lam * np.eye(len(u0)) - eq.omega) @ u0))
    return float(lam * np.real(np.vdot(u, u)) + 2.0 * lin + const)


def _phase_fix(u: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(u)))
    ph = u[k] / abs(u[k]) if abs(u[k]) > 0 else 1.0
    return u / ph


def max_snr_receive(eq: EchoQuadratic) -> np.ndarray:
    """Unit-norm dominant eigenvector; echo power lambda_max."""
    if eq.lambda_max == 0.0:
        raise RxbfError("echo matrix is zero")
    vals, vecs = np.linalg.eigh(eq.omega)
    u = vecs[:, -1]
    return _phase_fix(u / np.linalg.norm(u))


def mm_step(eq: EchoQuadratic, gamma: float, sigma2: float) -> MMStep:
    """One majorize-minimize update of the combiner.

    Solved exactly through the program's structure: the only point inside
    both norm constraints is the expansion point, kept (renormalized) when
    it satisfies the majorized echo floor; otherwise the program is empty
    and the eigenvector baseline takes over. The true echo floor is
    re-verified on the returned combiner either way.
    """
    if eq.u0 is None:
        raise RxbfError("expansion point required")
    floor = gamma * sigma2
    lam = eq.lambda_max
    if floor > lam:
        # no unit vector reaches the floor; hand back the best possible
        if lam > 0.0:
            u_new, flags = max_snr_receive(eq), ["floor-unreachable"]
        else:
            u_new, flags = eq.u0 / np.linalg.norm(eq.u0), ["floor-unreachable"]
    else:
        # majorized floor at the expansion point; the majorant touches the
        # quadratic there, so this is the true floor check
        e0 = echo_power(eq, eq.u0)
        if e0 >= floor - 1e-9 * max(lam, 1e-300):
            u_new, flags = eq.u0 / np.linalg.norm(eq.u0), []
        elif lam > 0.0:
            u_new, flags = max_snr_receive(eq), ["expansion-infeasible"]
        else:
            u_new, flags = eq.u0 / np.linalg.norm(eq.u0), []
    margin = echo_power(eq, u_new) - floor
    feasible = margin >= -1e-8 and echo_power(eq, u_new) >= floor * (1.0 - 1e-6)
    return MMStep(u_new, feasible, flags)
