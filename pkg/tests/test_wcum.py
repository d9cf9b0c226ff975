"""Alternating worst-case utility maximization: init, steps, runs and certificates."""

import math

import numpy as np
import pytest

from robust_miso import conic
from robust_miso.evaluate import exact_worst_sinr
from robust_miso.lmi import build_phi, min_eig, t_upper_bound
from robust_miso.model import (
    ChannelSet,
    CovarianceSet,
    ProportionalFair,
    SystemConfig,
    sample_channels,
    sample_errors,
)
from robust_miso.wcum import (
    EPSILON_CRITERION,
    ITERATION_CAP,
    IterationTrace,
    WcumState,
    certify_limit,
    init_t,
    init_t_from_beams,
    mrt_beams,
    run,
    step_q,
    step_t,
    targets_utility,
)


def _instance(seed, n=2, k=2, r=0.1, power=10.0):
    cfg = SystemConfig(n, k, power, 0.01)
    return cfg, ChannelSet(sample_channels(cfg, seed), r)


@pytest.fixture(scope="module")
def converged():
    cfg, ch = _instance(21)
    return cfg, ch, run(ch, cfg)


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------
def test_init_orthogonal_example():
    cfg = SystemConfig(2, 2, 10.0, 0.01)
    ch = ChannelSet(np.eye(2, dtype=complex), 0.1)
    assert np.allclose(init_t(ch, cfg), [67.5, 67.5])


def test_init_clamps_large_radius():
    cfg = SystemConfig(2, 2, 10.0, 0.01)
    h = np.array([[0.05, 0.0], [0.0, 1.0]], dtype=complex)
    t = init_t(ChannelSet(h, [0.1, 0.1]), cfg)
    assert t[0] == 0.0 and t[1] > 0


def test_init_rejects_zero_channel():
    cfg = SystemConfig(2, 2, 10.0, 0.01)
    with pytest.raises(ValueError):
        init_t(ChannelSet(np.array([[0, 0], [1, 0]], dtype=complex), 0.1), cfg)


def test_init_matches_beam_bound(rng):
    for seed in range(10):
        cfg, ch = _instance(seed, n=3, k=3, r=rng.uniform(0, 0.5))
        assert np.allclose(init_t(ch, cfg), init_t_from_beams(ch, cfg, mrt_beams(ch, cfg)), rtol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_init_against_sampled_ball_extremes(seed):
    # evaluate the signal min and each interference max over 1e5 boundary errors
    cfg, ch = _instance(seed, n=2, k=2, r=0.2)
    w = mrt_beams(ch, cfg)
    rng = np.random.default_rng(seed)
    t = init_t(ch, cfg)
    for k in range(2):
        rows = ch.estimates[k] + sample_errors(0.2, 2, 100_000, rng)
        gains = np.abs(rows.conj() @ w.T) ** 2
        sig = gains[:, k].min()
        intf = sum(gains[:, l].max() for l in range(2) if l != k)
        sampled = sig / (intf + 0.01)
        assert t[k] <= sampled * (1 + 1e-9)
        assert sampled - t[k] <= 0.01 * sampled


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------
def _state(t):
    t = np.asarray(t, dtype=float)
    return WcumState(0, t, None, None, None, 0.0, None)


def test_step_q_single_user_full_power():
    cfg, ch = _instance(3, n=3, k=1)
    covs, lambdas, slacks, psi = step_q(_state([0.0]), ch, cfg)
    assert covs.total_power == pytest.approx(cfg.power_budget, abs=1e-6)
    assert psi > 0 and lambdas[0] >= 0


def test_step_q_first_iteration_has_slack():
    for seed in range(3):
        cfg, ch = _instance(seed)
        *_, psi = step_q(_state(init_t(ch, cfg)), ch, cfg)
        assert psi > 0


def test_zero_slack_leaves_targets_unchanged():
    cfg, ch = _instance(4, n=2, k=1)
    t_star = cfg.power_budget * (np.linalg.norm(ch.estimates[0]) - 0.1) ** 2 / 0.01
    state = _state([t_star])
    covs, lambdas, slacks, psi = step_q(state, ch, cfg)
    assert psi <= 1e-5
    inner = WcumState(1, state.t, lambdas, slacks, covs, 0.0, psi)
    t_new, _ = step_t(inner, ch, cfg)
    assert t_new[0] == pytest.approx(t_star, abs=1e-5 * max(1.0, t_star))


def test_step_t_matches_joint_grid():
    cfg, ch = _instance(6, r=0.15)
    state = _state(init_t(ch, cfg))
    covs, lambdas, slacks, psi = step_q(state, ch, cfg)
    inner = WcumState(1, state.t, lambdas, slacks, covs, 0.0, psi)
    t_new, u_new = step_t(inner, ch, cfg)
    assert np.all(t_new >= state.t - 1e-6)
    assert u_new > targets_utility(state.t, cfg)

    # joint feasibility of (t1, t2) on a 2-D grid; the largest feasible point per axis
    n = 60
    axes = [np.linspace(0, 1.2 * t_new[k], n) for k in range(2)]
    ok = [np.array([min_eig(build_phi(t, lambdas[k], covs, ch, cfg, k).matrix)[0] >= -1e-6 for t in axes[k]])
          for k in range(2)]
    joint = ok[0][:, None] & ok[1][None, :]
    best = [axes[0][joint.any(axis=1)].max(), axes[1][joint.any(axis=0)].max()]
    step = [a[1] - a[0] for a in axes]
    for k in range(2):
        assert best[k] <= t_new[k] + 1e-9 and t_new[k] - best[k] <= step[k] + 1e-9


# ---------------------------------------------------------------------------
# full runs
# ---------------------------------------------------------------------------
def test_run_is_monotone_and_bounded(converged):
    cfg, ch, trace = converged
    u = trace.utilities
    assert np.all(np.diff(u) >= -1e-6)
    ts = np.array([s.t for s in trace.states])
    assert np.all(np.diff(ts, axis=0) >= -1e-6)
    bound = targets_utility([t_upper_bound(ch, cfg, k) for k in range(2)], cfg)
    assert u[-1] <= bound
    assert trace.converged and trace.stop_reason == EPSILON_CRITERION


def test_run_strict_increase_while_slack_remains(converged):
    _, _, trace = converged
    for prev, cur in zip(trace.states[:-1], trace.states[1:]):
        if cur.psi is not None and cur.psi > 1e-3:
            assert cur.utility_value > prev.utility_value


def test_converged_targets_are_certified(converged):
    cfg, ch, trace = converged
    cert = trace.certificate
    assert cert["feasibility"].passed
    fin = trace.final
    for k in range(2):
        assert exact_worst_sinr(fin.covs, ch, cfg, k) >= fin.t[k] - 1e-5


def test_single_user_perfect_csi_capacity():
    cfg = SystemConfig(3, 1, 10.0, 0.01)
    ch = ChannelSet(sample_channels(cfg, 9), 0.0)
    trace = run(ch, cfg)
    cap = math.log2(1 + 10.0 * np.linalg.norm(ch.estimates[0]) ** 2 / 0.01)
    assert trace.final.utility_value == pytest.approx(cap, abs=1e-3)


def test_perfect_csi_worst_case_equals_nominal():
    from robust_miso.model import sinr
    cfg, ch = _instance(13, r=0.0)
    fin = run(ch, cfg).final
    for k in range(2):
        nominal = sinr(fin.covs, ch.estimates[k], k, cfg)
        assert exact_worst_sinr(fin.covs, ch, cfg, k) == pytest.approx(nominal, rel=1e-6)


def test_zero_start_is_a_valid_initialization():
    cfg, ch = _instance(2)
    a = run(ch, cfg, certify=False)
    b = run(ch, cfg, t_init=np.zeros(2), certify=False)
    assert np.all(np.diff(b.utilities) >= -1e-6)
    # Pareto points differ between starts; the spread is reported, not bounded
    assert abs(a.final.utility_value - b.final.utility_value) < 5.0


def test_proportional_fair_run():
    cfg = SystemConfig(2, 2, 10.0, 0.01, ProportionalFair())
    ch = ChannelSet(sample_channels(cfg, 1), 0.1)
    trace = run(ch, cfg, max_iters=30, certify=False)
    u = trace.utilities
    assert np.all(np.isfinite(u)) and np.all(np.diff(u) >= -1e-6)


def test_proportional_fair_from_zero_uses_target_change():
    # the utility is -inf at the start, so the stop rule falls back to target changes;
    # a zero start may end at a Pareto point that leaves one user at zero
    cfg = SystemConfig(2, 2, 10.0, 0.01, ProportionalFair())
    ch = ChannelSet(sample_channels(cfg, 1), 0.1)
    trace = run(ch, cfg, max_iters=20, t_init=np.zeros(2), certify=False)
    assert trace.states[0].utility_value == -np.inf
    assert trace.converged
    ts = np.array([s.t for s in trace.states])
    assert np.all(np.diff(ts, axis=0) >= -1e-6)
    assert np.all(np.abs(ts[-1] - ts[-2]) <= 1e-6)


def test_argument_validation():
    cfg, ch = _instance(0)
    with pytest.raises(ValueError):
        run(ch, cfg, epsilon=0.0)
    with pytest.raises(ValueError):
        run(ch, cfg, max_iters=0)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------
def test_perturbed_target_fails_feasibility(converged):
    cfg, ch, trace = converged
    fin = trace.final
    bumped = WcumState(fin.iteration, fin.t + np.array([0.1, 0.0]), fin.lambdas, fin.slacks,
                       fin.covs, fin.utility_value, fin.psi)
    cert = certify_limit(bumped, ch, cfg, probe=False)
    assert not cert["feasibility"].passed and cert["feasibility"].margin > 0


def test_truncated_run_fails_probe():
    cfg, ch = _instance(5)
    trace = run(ch, cfg, max_iters=1)
    assert trace.stop_reason == ITERATION_CAP and not trace.converged
    cert = trace.certificate
    assert cert["feasibility"].passed
    assert not cert["pareto-probe"].passed
    assert not cert.passed


def test_certificate_to_dict(converged):
    d = converged[2].certificate.to_dict()
    assert [c["name"] for c in d["checks"]] == ["feasibility", "zero-slack", "pareto-probe"]
    assert d["passed"] == all(c["passed"] for c in d["checks"])


def test_solver_failure_stops_run():
    cfg, ch = _instance(0)
    trace = run(ch, cfg, settings=conic.SolverSettings(max_iter=1, regularization=(1e-8,)))
    assert trace.stop_reason == "solver-failure" and trace.message
    assert len(trace.states) == 1


# ---------------------------------------------------------------------------
# trace export
# ---------------------------------------------------------------------------
def test_trace_jsonl_round_trip(converged, tmp_path):
    _, _, trace = converged
    path = tmp_path / "trace.jsonl"
    trace.write_jsonl(path, include_covs=True)
    lines = path.read_text().splitlines()
    assert len(lines) == len(trace.states)
    back = IterationTrace.read_states(path)
    for a, b in zip(trace.states, back):
        assert a.iteration == b.iteration
        assert np.array_equal(a.t, b.t)
        if a.covs is not None:
            assert np.array_equal(a.covs.matrices, b.covs.matrices)
            assert np.array_equal(a.lambdas, b.lambdas)


def test_rerun_is_deterministic():
    cfg, ch = _instance(17)
    a = run(ch, cfg, max_iters=5, certify=False)
    b = run(ch, cfg, max_iters=5, certify=False)
    assert a.to_records() == b.to_records()
