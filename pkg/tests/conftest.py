"""Shared builders for small, fast test scenarios."""

import numpy as np
import pytest

from risuav.scenario import Position3, ScenarioConfig, db_to_linear


def make_config(**overrides) -> ScenarioConfig:
    """Compact default geometry; override any field per test."""
    rician_db = {"ud": 15.0, "ur": 5.0, "rd": 5.0, "ue": 5.0, "re": 5.0, "rt": 5.0}
    base = dict(
        n_tx=2,
        n_ris=3,
        n_slots=2,
        slot_len=0.8,
        v_max=60.0,
        uav_start=Position3(0.0, 0.0, 15.0),
        uav_final=Position3(60.0, 30.0, 10.0),
        ris_pos=Position3(0.0, 20.0, 10.0),
        iot_pos=Position3(10.0, 20.0, 0.0),
        eve_pos=Position3(30.0, 25.0, 0.0),
        ut_pos=Position3(50.0, 30.0, 0.0),
        p_avg=1.0,
        p_peak=1.0e6,
        gamma_sense=1.0,
        omega=0.5,
        eps_eve=0.01,
        eps_ut=0.01,
        rho=1.0e-3,
        kappa=3.1,
        alpha=2.5,
        rician={k: db_to_linear(v) for k, v in rician_db.items()},
        rician_db=rician_db,
        noise_power=1.0e-12,
        alpha_s=316.0 + 0.0j,
        seed=1,
        bcd_tol=1.0e-4,
        max_bcd_iters=50,
        sca_tol=1.0e-5,
        sca_max_iters=8,
    )
    base.update(overrides)
    if "rician_db" in overrides and "rician" not in overrides:
        base["rician"] = {k: db_to_linear(v) for k, v in base["rician_db"].items()}
    cfg = ScenarioConfig(**base)
    cfg.validate()
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def random_beamformer(cfg, rng, power=None):
    """Random w scaled to the given total power (default: the average budget)."""
    w = rng.standard_normal(cfg.n_tx) + 1j * rng.standard_normal(cfg.n_tx)
    target = cfg.p_avg if power is None else power
    return w * np.sqrt(target) / np.linalg.norm(w)


def random_phases(cfg, rng):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, cfg.n_ris))


def random_combiner(cfg, rng):
    u = rng.standard_normal(cfg.n_tx) + 1j * rng.standard_normal(cfg.n_tx)
    return u / np.linalg.norm(u)


def random_solution(cfg, rng):
    """Feasible-by-construction random solution on the initial trajectory.

    Echo SNR is not enforced here; tests that need (21g) tighten it themselves.
    """
    from risuav.metrics import SolutionState
    from risuav.scenario import initial_trajectory

    wp = initial_trajectory(cfg)
    return SolutionState(
        waypoints=wp,
        w=[random_beamformer(cfg, rng) for _ in range(cfg.n_slots)],
        theta=[random_phases(cfg, rng) for _ in range(cfg.n_slots)],
        u=[random_combiner(cfg, rng) for _ in range(cfg.n_slots)],
    )
