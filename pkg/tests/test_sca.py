import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isacsim import oracles
from isacsim.channel import ChannelParams, WidebandChannels, crandn, sample_narrowband, stream
from isacsim.metrics import LinkBudget, evaluate
from isacsim.sca import (Layout, ScaOptions, build_problem, build_surrogates,
                         extract_sensing_covariance, herm_coeffs, herm_from_params, herm_params,
                         initial_point, link_rows, linearize_quadratic_over_linear,
                         principal_split, run_sca, true_gamma)
from isacsim.solver import kkt_residual, solve, strictly_feasible_start
from isacsim.wideband import run_sca_wideband

FAST = ScaOptions(restarts=1)


def test_linearization_examples():
    sa, sb = linearize_quadratic_over_linear(1.0, 2.0)
    assert (sa, sb) == (1.0, -0.25)
    # tight at the expansion point
    assert (np.conj(sa) * 1.0).real + sb * 2.0 == pytest.approx(0.5)
    sa, sb = linearize_quadratic_over_linear(0.0, 1.0)
    assert sa == 0 and sb == 0


@settings(max_examples=1000, deadline=None)
@given(ar=st.floats(-5, 5), ai=st.floats(-5, 5), b=st.floats(0.01, 10),
       tr=st.floats(-5, 5), ti=st.floats(-5, 5), bt=st.floats(0.01, 10))
def test_linearization_lower_bounds(ar, ai, b, tr, ti, bt):
    a, at = complex(ar, ai), complex(tr, ti)
    sa, sb = linearize_quadratic_over_linear(at, bt)
    bound = (np.conj(sa) * a).real + sb * b
    assert bound <= abs(a) ** 2 / b + 1e-9 * (1 + abs(a) ** 2 / b)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), M=st.integers(1, 5))
def test_hermitian_parametrization(seed, M):
    rng = np.random.default_rng(seed)
    G = crandn(rng, M, M)
    Q = G @ G.conj().T
    A = crandn(rng, M, M)
    A = A + A.conj().T
    np.testing.assert_allclose(herm_from_params(herm_params(Q), M), Q, atol=1e-12)
    assert herm_coeffs(A) @ herm_params(Q) == pytest.approx(np.trace(A @ Q).real, abs=1e-9)


def test_layout_counts(narrow_channels):
    full = Layout("narrow", "full", narrow_channels).count()
    assert full == {"herm": 32, "beam": 16, "r": 4, "g": 4, "d": 4, "herm_blocks": 2,
                    "beams": 2}
    half = Layout("narrow", "half", narrow_channels).count()
    assert half["herm_blocks"] == 2 and half["r"] == 2 and half["g"] == 2


def test_spec_labels_and_objective_terms(narrow_channels, budget):
    lay = Layout("narrow", "half", narrow_channels)
    x0 = initial_point(lay, narrow_channels, budget, np.random.default_rng(0))
    spec = build_problem(lay, narrow_channels, budget, 0.5, 1.5e4, x_t=x0)
    assert spec.lin_labels == ["power[0]", "power[1]", "r>=0[0, 1]", "r>=0[1, 0]",
                               "d>=eps[0, 0]", "d>=eps[1, 1]", "gamma[0, 1]", "gamma[1, 0]",
                               "D[0, 0]", "D[1, 1]"]
    assert [p.label for p in spec.psd] == ["schur[0,0,0]", "schur[1,1,0]"]
    assert build_problem(lay, narrow_channels, budget, 1.0, 1.5e4, x_t=x0).crb_coef == 0
    assert build_problem(lay, narrow_channels, budget, 0.0, 1.5e4, x_t=x0).rate_weight == 0
    with pytest.raises(ValueError):
        build_problem(lay, narrow_channels, budget, 1.2, 1.5e4, x_t=x0)


@pytest.mark.parametrize("mode", ["full", "half"])
@pytest.mark.parametrize("seed", range(5))
def test_start_point_margin(mode, seed, budget):
    ch = sample_narrowband(ChannelParams(M=4), stream(11, seed, "channel"))
    lay = Layout("narrow", mode, ch)
    x0 = initial_point(lay, ch, budget, stream(11, seed, "init"))
    spec = build_problem(lay, ch, budget, 0.5, 1.5e4, x_t=x0)
    x = strictly_feasible_start(spec, np.random.default_rng(0))
    assert spec.margin(x) >= 1e-6
    assert lay.design(x).check() == []


def test_half_duplex_silent_slots_exact(narrow_channels, budget):
    lay = Layout("narrow", "half", narrow_channels)
    X = oracles.sample_designs(lay, np.random.default_rng(1), 5)
    for x in X:
        d = lay.design(x)
        assert not np.any(d.Q[0, 1]) and not np.any(d.Q[1, 0])
        assert not np.any(d.beams[0, 1]) and not np.any(d.beams[1, 0])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_surrogate_tight_and_lower_bound(seed):
    rng = np.random.default_rng(seed)
    ch = sample_narrowband(ChannelParams(M=3), rng)
    budget = LinkBudget.from_db(N=50)
    lay = Layout("narrow", ("full", "half")[seed % 2], ch)
    rows = link_rows(lay, ch, budget)
    x_t = oracles.sample_designs(lay, rng, 1)[0]
    gam, _ = build_surrogates(lay, rows, budget, x_t)
    for key in lay.links:
        assert gam[key](x_t) == pytest.approx(true_gamma(rows, budget, key, x_t), abs=1e-10)
    for x in oracles.sample_designs(lay, rng, 50):
        for key in lay.links:
            assert gam[key](x) <= true_gamma(rows, budget, key, x) + 1e-10


def test_extract_sensing_covariance_repairs_small_negatives(rng):
    w = crandn(rng, 3)
    Q = np.outer(w, w.conj()) - 1e-9 * np.eye(3)
    R = extract_sensing_covariance(Q, w[None, :], strict=False)
    assert np.linalg.eigvalsh(R).min() >= 0


def test_one_iteration_beats_rejection_sampling():
    budget = LinkBudget.from_db(N=50)
    ch = sample_narrowband(ChannelParams(M=2), stream(5, 0, "channel"))
    lay = Layout("narrow", "full", ch)
    rows = link_rows(lay, ch, budget)
    x0 = initial_point(lay, ch, budget, stream(5, 0, "init"))
    spec = build_problem(lay, ch, budget, 0.5, 1.5e4, x_t=x0, rows=rows)
    sol = solve(spec, x0)
    assert sol.status == "optimal"
    assert sol.kkt_residual < 1e-6
    best = oracles.rejection_sampling_best(spec, lay, rows, x0, budget, stream(5, 0, "rs"),
                                           100000)
    assert sol.objective >= best - 1e-3


@pytest.mark.parametrize("mode", ["full", "half"])
@pytest.mark.parametrize("weight", [0.1, 0.9])
def test_run_sca_narrowband(mode, weight, narrow_channels, budget):
    design, state = run_sca(narrow_channels, budget, weight, mode, options=FAST,
                            rng=np.random.default_rng(3))
    traj = np.array(state.trajectory)
    assert np.all(np.diff(traj) >= -1e-9)
    assert state.converged and state.t <= 50
    assert state.kkt_residual < 1e-4
    assert design.check() == []
    rows = state.trace
    assert [r["t"] for r in rows] == list(range(len(rows)))
    assert design.sensing_power().sum() < 1e-3


def test_plain_sca_is_monotone(narrow_channels, budget):
    opts = ScaOptions(restarts=1, extrapolate=False, kkt_target=None, max_iter=30)
    _, state = run_sca(narrow_channels, budget, 0.5, "full", options=opts,
                       rng=np.random.default_rng(4))
    assert np.all(np.diff(state.trajectory) >= -1e-9)
    assert state.extrapolations == [0.0] * state.t


def test_rate_upper_bound_comm_only(budget):
    ch = sample_narrowband(ChannelParams(M=4, beta=np.inf), stream(0, 0, "x"))
    design, _ = run_sca(ch, budget, 1.0, "full", options=FAST, rng=np.random.default_rng(0))
    R = evaluate(design, ch, budget)["R"]
    assert 0 < R <= 2 * np.log2(1 + 2 * budget.rho_c * 4)


def test_sensing_only_split_is_canonical(narrow_channels, budget):
    design, state = run_sca(narrow_channels, budget, 0.0, "half", options=FAST,
                            rng=np.random.default_rng(0))
    assert design.sensing_power().sum() < 1e-6
    again = principal_split(design)
    np.testing.assert_allclose(again.Q, design.Q)


def test_runs_are_reproducible(narrow_channels, budget):
    a = run_sca(narrow_channels, budget, 0.5, "half", options=FAST, rng=stream(1, 2, "i"))[1]
    b = run_sca(narrow_channels, budget, 0.5, "half", options=FAST, rng=stream(1, 2, "i"))[1]
    assert a.trajectory == b.trajectory


def test_restarts_recorded(narrow_channels, budget):
    _, state = run_sca(narrow_channels, budget, 0.5, "half", options=ScaOptions(restarts=3),
                       rng=np.random.default_rng(2))
    assert len(state.restart_objectives) == 3
    assert state.trajectory[-1] == max(state.restart_objectives)
    assert state.single_run_objective == state.restart_objectives[0]


def test_single_tap_wideband_matches_narrowband(narrow_channels, budget):
    ch = narrow_channels
    wide = WidebandChannels(h=ch.h[:, None, :], g=ch.g[:, None, :], pdp=np.ones(1),
                            theta=ch.theta, alpha=ch.alpha, nu=ch.nu)
    a = run_sca(ch, budget, 0.5, "full", options=FAST, rng=stream(2, 0, "init"))[1]
    b = run_sca_wideband(wide, budget, 0.5, "full", options=FAST, rng=stream(2, 0, "init"))[1]
    assert b.trajectory[-1] == pytest.approx(a.trajectory[-1], abs=1e-6)


def test_true_problem_certificate(narrow_channels, budget):
    lay = Layout("narrow", "full", narrow_channels)
    _, state = run_sca(narrow_channels, budget, 0.5, "full", options=FAST,
                       rng=np.random.default_rng(9))
    true = build_problem(lay, narrow_channels, budget, 0.5, 1.5e4, surrogate=False)
    assert kkt_residual(true, state.x) < 1e-4
