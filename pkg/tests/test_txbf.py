"""Transmit-beamforming step: surrogate bounds, oracles, and SCA behavior."""

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from conftest import make_config, random_beamformer, random_combiner, random_phases, random_solution
from risuav.channel import assemble_all
from risuav.metrics import SolutionState, snr_echo, snr_iot
from risuav.robust_csi import intercept_gain, lift, worst_case
from risuav.scenario import Position3, initial_trajectory
from risuav.txbf import (
    SurrogateObjective,
    TxbfIterate,
    effective_vectors,
    linearize_sensing,
    solve_txbf,
    surrogate_objective,
)


def build_problem(cfg, seed=11):
    rng = np.random.default_rng(seed)
    snaps = assemble_all(cfg, initial_trajectory(cfg), seed=cfg.seed)
    sol = random_solution(cfg, rng)
    return snaps, sol, rng


def frozen_deltas(cfg, snaps, sol):
    out = []
    for s in range(cfg.n_slots):
        de = worst_case(lift(snaps[s], sol.w[s], sol.theta[s], "eve", cfg.eps_eve)).delta
        dt = worst_case(lift(snaps[s], sol.w[s], sol.theta[s], "ut", cfg.eps_ut)).delta
        out.append((de, dt))
    return out


def make_surrogate(cfg, snaps, deltas, sol):
    it = TxbfIterate(w0=list(sol.w), zeta1_0=np.zeros(cfg.n_slots), zeta2_0=np.zeros(cfg.n_slots))
    obj = surrogate_objective(cfg, snaps, deltas, sol.theta, it)
    it.zeta1_0 = obj.eve_powers(sol.w)
    it.zeta2_0 = obj.ut_powers(sol.w)
    return obj


# ---------------------------------------------------------------- signal maps


def test_effective_vectors_match_lifted_intercepts(rng):
    cfg = make_config(eps_eve=0.05, eps_ut=0.03)
    snaps, sol, _ = build_problem(cfg)
    snap, theta = snaps[0], sol.theta[0]
    w0 = sol.w[0]
    de = worst_case(lift(snap, w0, theta, "eve", cfg.eps_eve)).delta
    dt = worst_case(lift(snap, w0, theta, "ut", cfg.eps_ut)).delta
    a_d, b_e, c_e, b_t = effective_vectors(snap, theta, de, dt)
    for _ in range(3):
        w = random_beamformer(cfg, rng)
        eve_aff = abs(b_e.conj() @ w + c_e) ** 2
        eve_lift = intercept_gain(lift(snap, w, theta, "eve", cfg.eps_eve), de)
        assert eve_aff == pytest.approx(eve_lift, rel=1e-10)
        ut_aff = abs(b_t.conj() @ w) ** 2
        ut_lift = intercept_gain(lift(snap, w, theta, "ut", cfg.eps_ut), dt)
        assert ut_aff == pytest.approx(ut_lift, rel=1e-10)


def test_useful_map_matches_iot_snr(rng):
    cfg = make_config()
    snaps, sol, _ = build_problem(cfg)
    a_d, _, _, _ = effective_vectors(snaps[1], sol.theta[1])
    for _ in range(3):
        w = random_beamformer(cfg, rng)
        assert abs(a_d.conj() @ w) ** 2 / cfg.noise_power == pytest.approx(
            snr_iot(cfg, snaps[1], w, sol.theta[1]), rel=1e-10
        )


# ------------------------------------------------------------ sensing tangent


def test_sensing_tangent_touches_and_minorizes(rng):
    cfg = make_config()
    snaps, sol, _ = build_problem(cfg)
    snap, theta, u, w0 = snaps[0], sol.theta[0], sol.u[0], sol.w[0]
    lin = linearize_sensing(snap, theta, u, w0, cfg.noise_power)
    assert not lin.degenerate
    assert lin.value(w0) == pytest.approx(lin.true_power(w0), rel=1e-12)
    # ties back to the reported echo SNR
    assert lin.true_power(w0) / np.vdot(u, u).real == pytest.approx(
        snr_echo(cfg, snap, w0, theta, u), rel=1e-10
    )
    scale = lin.true_power(w0)
    for _ in range(100):
        w = random_beamformer(cfg, rng, power=float(rng.uniform(0.1, 2.0)))
        assert lin.value(w) <= lin.true_power(w) + 1e-9 * max(scale, 1.0)


def test_sensing_tangent_gradient_matches_quadratic(rng):
    cfg = make_config()
    snaps, sol, _ = build_problem(cfg)
    lin = linearize_sensing(snaps[0], sol.theta[0], sol.u[0], sol.w[0], cfg.noise_power)
    w0 = sol.w[0]
    h = 1e-5
    for _ in range(5):
        d = rng.standard_normal(cfg.n_tx) + 1j * rng.standard_normal(cfg.n_tx)
        d /= np.linalg.norm(d)
        fd_lin = (lin.value(w0 + h * d) - lin.value(w0 - h * d)) / (2 * h)
        fd_true = (lin.true_power(w0 + h * d) - lin.true_power(w0 - h * d)) / (2 * h)
        assert fd_lin == pytest.approx(fd_true, rel=1e-5, abs=1e-8 * abs(fd_true))


def test_sensing_degenerate_flag():
    cfg = make_config(alpha_s=0.0 + 0.0j)
    snaps, sol, _ = build_problem(cfg)
    lin = linearize_sensing(snaps[0], sol.theta[0], sol.u[0], sol.w[0], cfg.noise_power)
    assert lin.degenerate


# --------------------------------------------------------- objective surrogate


def test_surrogate_touches_true_objective_at_expansion():
    cfg = make_config(eps_eve=0.02, eps_ut=0.02)
    snaps, sol, _ = build_problem(cfg)
    deltas = frozen_deltas(cfg, snaps, sol)
    obj = make_surrogate(cfg, snaps, deltas, sol)
    assert obj.value(sol.w) == pytest.approx(obj.true_value(sol.w), rel=1e-10)


def test_surrogate_minorizes_true_objective(rng):
    cfg = make_config()
    snaps, sol, _ = build_problem(cfg)
    obj = make_surrogate(cfg, snaps, None, sol)
    for _ in range(100):
        w = [random_beamformer(cfg, rng, power=float(rng.uniform(0.05, 1.5))) for _ in range(cfg.n_slots)]
        assert obj.value(w) <= obj.true_value(w) + 1e-9


def test_surrogate_gradient_matches_true(rng):
    cfg = make_config(eps_eve=0.01, eps_ut=0.01)
    snaps, sol, _ = build_problem(cfg)
    deltas = frozen_deltas(cfg, snaps, sol)
    obj = make_surrogate(cfg, snaps, deltas, sol)
    h = 1e-7
    for _ in range(5):
        ds = [rng.standard_normal(cfg.n_tx) + 1j * rng.standard_normal(cfg.n_tx) for _ in range(cfg.n_slots)]
        plus = [sol.w[s] + h * ds[s] for s in range(cfg.n_slots)]
        minus = [sol.w[s] - h * ds[s] for s in range(cfg.n_slots)]
        fd_sur = (obj.value(plus) - obj.value(minus)) / (2 * h)
        fd_true = (obj.true_value(plus) - obj.true_value(minus)) / (2 * h)
        assert fd_sur == pytest.approx(fd_true, rel=1e-5, abs=1e-10)


def test_slack_form_true_value_matches_power_form():
    cfg = make_config()
    snaps, sol, _ = build_problem(cfg)
    obj = make_surrogate(cfg, snaps, None, sol)
    z1 = obj.eve_powers(sol.w)
    z2 = obj.ut_powers(sol.w)
    assert obj.true_value(sol.w, z1, z2) == pytest.approx(obj.true_value(sol.w), rel=1e-12)


# ------------------------------------------------------------------- oracles


def single_slot_config(**overrides):
    base = dict(
        n_slots=1,
        uav_final=Position3(30.0, 15.0, 15.0),
        gamma_sense=0.0,
        eps_eve=0.0,
        eps_ut=0.0,
        sca_tol=1e-9,
        sca_max_iters=40,
    )
    base.update(overrides)
    return make_config(**base)


def test_grid_oracle_two_antennas():
    """Full beamformer sphere modulo global phase is a 2-parameter family."""
    cfg = single_slot_config(n_tx=2, n_ris=2, omega=1.0)
    snaps = assemble_all(cfg, initial_trajectory(cfg), seed=cfg.seed)
    rng = np.random.default_rng(5)
    theta = random_phases(cfg, rng)
    u = random_combiner(cfg, rng)
    sigma = np.sqrt(cfg.noise_power)
    a_d, b_e, _, _ = effective_vectors(snaps[0], theta)
    a_d, b_e = a_d / sigma, b_e / sigma

    e1 = a_d / np.linalg.norm(a_d)
    e2 = np.array([-np.conj(e1[1]), np.conj(e1[0])])
    assert abs(e1.conj() @ e2) < 1e-12
    root_p = np.sqrt(cfg.p_avg)
    A1 = complex(a_d.conj() @ e1)
    B1, B2 = complex(b_e.conj() @ e1), complex(b_e.conj() @ e2)

    def batch_objective(phi, psi):
        useful = (root_p * np.cos(phi)) ** 2 * abs(A1) ** 2 + 0.0 * psi
        evep = abs(root_p * (np.cos(phi) * B1 + np.exp(1j * psi) * np.sin(phi) * B2)) ** 2
        return np.log2(1.0 + useful) - np.log2(1.0 + evep)

    # coarse pass, then narrow around the incumbent; the eavesdropper-nulling
    # ridge is sharper than any practical single-pass grid
    lo = np.array([0.0, 0.0])
    hi = np.array([np.pi / 2, 2 * np.pi])
    grid_best = -np.inf
    for _ in range(4):
        phi = np.linspace(lo[0], hi[0], 601)
        psi = np.linspace(lo[1], hi[1], 601)
        vals = batch_objective(phi[:, None], psi[None, :])
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        grid_best = max(grid_best, float(vals[i, j]))
        span = (hi - lo) / 600.0
        center = np.array([phi[i], psi[j]])
        lo = np.maximum(np.array([0.0, -np.inf]), center - 3 * span)
        hi = np.minimum(np.array([np.pi / 2, np.inf]), center + 3 * span)

    w_start = root_p * e1
    sol = SolutionState(
        waypoints=initial_trajectory(cfg), w=[w_start], theta=[theta], u=[u]
    )
    res = solve_txbf(cfg, snaps, None, sol)
    assert res.ok
    assert res.trace[-1] == pytest.approx(grid_best, abs=1e-3)


def test_single_antenna_fixed_point():
    """With one antenna only the transmit power matters; start at its optimum."""
    cfg = single_slot_config(n_tx=1, n_ris=2, omega=0.5)
    snaps = assemble_all(cfg, initial_trajectory(cfg), seed=cfg.seed)
    rng = np.random.default_rng(9)
    theta = random_phases(cfg, rng)
    u = random_combiner(cfg, rng)
    a_d, b_e, _, b_t = effective_vectors(snaps[0], theta)
    g_u = abs(a_d[0]) ** 2 / cfg.noise_power
    g_e = abs(b_e[0]) ** 2 / cfg.noise_power
    g_t = abs(b_t[0]) ** 2 / cfg.noise_power

    def neg_obj(p):
        return -(
            np.log2(1 + p * g_u)
            - cfg.omega * np.log2(1 + p * g_e)
            - (1 - cfg.omega) * np.log2(1 + p * g_t)
        )

    best = minimize_scalar(neg_obj, bounds=(0.0, cfg.p_avg), method="bounded",
                           options={"xatol": 1e-14})
    p_star = float(best.x)
    sol = SolutionState(
        waypoints=initial_trajectory(cfg),
        w=[np.array([np.sqrt(p_star) + 0.0j])],
        theta=[theta],
        u=[u],
    )
    res = solve_txbf(cfg, snaps, None, sol)
    assert res.ok
    assert abs(res.trace[-1] - res.trace[0]) <= 1e-8
    assert abs(np.linalg.norm(res.w[0]) - np.sqrt(p_star)) <= 1e-4


# --------------------------------------------------------------- SCA behavior


def test_perfect_csi_reduction_is_bitwise():
    cfg = make_config(gamma_sense=0.0)
    snaps, sol, _ = build_problem(cfg)
    zeros = [(np.zeros(cfg.n_ris + 1, dtype=complex), np.zeros(cfg.n_ris, dtype=complex))
             for _ in range(cfg.n_slots)]
    res_none = solve_txbf(cfg, snaps, None, sol)
    res_zero = solve_txbf(cfg, snaps, zeros, sol)
    assert res_none.trace == res_zero.trace
    for s in range(cfg.n_slots):
        assert np.array_equal(res_none.w[s], res_zero.w[s])


def test_monotone_trace_with_sensing_and_uncertainty():
    cfg = make_config(n_tx=3, n_ris=4, eps_eve=0.02, eps_ut=0.02)
    snaps, sol, _ = build_problem(cfg, seed=13)
    echo0 = min(
        snr_echo(cfg, snaps[s], sol.w[s], sol.theta[s], sol.u[s]) for s in range(cfg.n_slots)
    )
    cfg = cfg.with_updates(gamma_sense=0.3 * echo0)
    deltas = frozen_deltas(cfg, snaps, sol)
    res = solve_txbf(cfg, snaps, deltas, sol)
    assert res.ok
    assert "sensing-relaxed" not in res.flags
    diffs = np.diff(res.trace)
    assert np.all(diffs >= -1e-9)
    assert res.trace[-1] >= res.trace[0] - 1e-12
    for s in range(cfg.n_slots):
        achieved = snr_echo(cfg, snaps[s], res.w[s], sol.theta[s], sol.u[s])
        assert achieved >= cfg.gamma_sense * (1 - 1e-4)


def test_power_budgets_respected():
    cfg = make_config(p_peak=2.0)
    snaps, sol, _ = build_problem(cfg)
    cfg = cfg.with_updates(gamma_sense=0.0)
    res = solve_txbf(cfg, snaps, None, sol)
    assert res.ok
    powers = [float(np.vdot(w, w).real) for w in res.w]
    assert np.mean(powers) <= cfg.p_avg + 1e-6
    assert max(powers) <= cfg.p_peak + 1e-6


def test_more_power_never_hurts():
    cfg = single_slot_config(n_tx=2, n_ris=3)
    snaps, sol, _ = build_problem(cfg)
    res_lo = solve_txbf(cfg, snaps, None, sol)
    cfg_hi = cfg.with_updates(p_avg=2.0 * cfg.p_avg, p_peak=2.0 * cfg.p_peak)
    res_hi = solve_txbf(cfg_hi, snaps, None, sol)
    assert res_hi.ok and res_lo.ok
    assert res_hi.trace[-1] >= res_lo.trace[-1] - 1e-6


def test_sensing_relaxation_flagged():
    cfg = make_config()
    snaps, sol, _ = build_problem(cfg, seed=17)
    echo0 = min(
        snr_echo(cfg, snaps[s], sol.w[s], sol.theta[s], sol.u[s]) for s in range(cfg.n_slots)
    )
    cfg = cfg.with_updates(gamma_sense=4.0 * echo0)
    res = solve_txbf(cfg, snaps, None, sol)
    assert "sensing-relaxed" in res.flags
    powers = [float(np.vdot(w, w).real) for w in res.w]
    assert np.mean(powers) <= cfg.p_avg + 1e-6


def test_degenerate_sensing_aborts():
    cfg = make_config(alpha_s=0.0 + 0.0j, gamma_sense=5.0)
    snaps, sol, _ = build_problem(cfg)
    res = solve_txbf(cfg, snaps, None, sol)
    assert not res.ok
    assert "sensing-degenerate" in res.flags
    for s in range(cfg.n_slots):
        assert np.array_equal(res.w[s], sol.w[s])
