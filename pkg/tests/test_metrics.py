import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftrl_uncertainty import metrics
from ftrl_uncertainty.dynamics import AlgorithmSpec, Rule
from ftrl_uncertainty.errors import ContractViolation, InvariantViolation
from ftrl_uncertainty.game import Game, RegKind
from ftrl_uncertainty.linear import (
    MapKind,
    build_euler_map,
    build_symplectic_map,
    covariance_series,
    matrix_exponential,
    build_generator,
)
from ftrl_uncertainty.metrics import (
    Ensemble,
    GaussianDual,
    UniformSimplexPatch,
    chebyshev_check,
    covariance_of,
    ensemble_covariance_series,
    entropy_delta_linear,
    entropy_delta_mwu_step,
    entropy_ledger_linear,
    extrema_alignment,
    figure1_dispersion,
    gromov_width_linear,
    heisenberg_margin,
    heisenberg_series,
    jackknife_covariance_se,
    mwu_entropy_series,
    sample_covariance,
    sample_ensemble,
    sample_patch_strategies,
    symplectic_eigenvalues,
    symplectic_form,
)

from .conftest import P0_2X2

GDA = AlgorithmSpec(Rule.GDA, 0.05)
ALT_GDA = AlgorithmSpec(Rule.ALT_GDA, 0.05)


def test_patch_samples_stay_in_patch(rps):
    patch = UniformSimplexPatch([0.03, 0.07, 0.9], 0.05)
    x = sample_patch_strategies(patch, 400, 0).x1
    np.testing.assert_allclose(x.sum(axis=1), 1, atol=1e-12)
    assert np.all(x > 0)
    # barycentric offsets along (1,-1,0) and (0,1,-1) are bounded by side/2
    u = x[:, 0] - 0.03
    v = 0.9 - x[:, 2]
    assert np.all(np.abs(u) <= 0.025 + 1e-12) and np.all(np.abs(v) <= 0.025 + 1e-12)


def test_patch_validation():
    with pytest.raises(ContractViolation):
        UniformSimplexPatch([0.5, 0.6, 0.1])
    with pytest.raises(ContractViolation):
        UniformSimplexPatch([0.01, 0.09, 0.9], 0.05)


def test_gaussian_sample_covariance_matches(a1):
    ens = sample_ensemble(GaussianDual(np.zeros(4), P0_2X2), 100_000, 5, a1, ALT_GDA)
    Z = ens.stacked()
    S = covariance_of(Z)
    se = jackknife_covariance_se(Z)
    assert np.all(np.abs(S - P0_2X2) <= 3 * se)


def test_zero_covariance_samples_equal_mean(a1):
    mean = np.array([1.0, -2.0, 0.5, 3.0])
    ens = sample_ensemble(GaussianDual(mean, np.zeros((4, 4))), 50, 1, a1, ALT_GDA)
    np.testing.assert_array_equal(ens.stacked(), np.broadcast_to(mean, (50, 4)))


def test_degenerate_covariance_factor(a1):
    v = np.array([1.0, 2.0, 0.0, -1.0])
    ens = sample_ensemble(GaussianDual(np.zeros(4), np.outer(v, v)), 1000, 2, a1, ALT_GDA)
    Z = ens.stacked()
    # all samples lie on the line spanned by v
    resid = Z - np.outer(Z @ v / (v @ v), v)
    assert np.abs(resid).max() < 1e-12


def test_non_psd_rejected():
    with pytest.raises(ContractViolation):
        GaussianDual(np.zeros(2), [[1.0, 2.0], [2.0, 1.0]])
    with pytest.raises(ContractViolation):
        GaussianDual(np.zeros(2), [[1.0, 0.5], [0.0, 1.0]])


def test_ensemble_needs_two_samples(a1):
    with pytest.raises(ContractViolation):
        sample_ensemble(GaussianDual(np.zeros(4), np.eye(4)), 1, 0, a1, ALT_GDA)


def test_seed_determinism(a1):
    d = GaussianDual(np.zeros(4), P0_2X2)
    z1 = sample_ensemble(d, 100, 42, a1, ALT_GDA).advance(10).stacked()
    z2 = sample_ensemble(d, 100, 42, a1, ALT_GDA).advance(10).stacked()
    z3 = sample_ensemble(d, 100, 43, a1, ALT_GDA).stacked()
    assert z1.tobytes() == z2.tobytes()
    assert not np.array_equal(z1, z3)


def test_sample_covariance_by_hand(a1):
    Z = np.array([[0.0, 0.0], [2.0, 0.0]])
    np.testing.assert_allclose(covariance_of(Z), [[2.0, 0.0], [0.0, 0.0]])
    np.testing.assert_array_equal(covariance_of(np.ones((2, 3))), np.zeros((3, 3)))
    ens = sample_ensemble(GaussianDual(np.zeros(4), np.eye(4)), 10, 0, a1, ALT_GDA)
    assert sample_covariance(ens).P.shape == (4, 4)


def test_jackknife_against_brute_force():
    Z = np.random.default_rng(4).normal(size=(30, 3))
    n = len(Z)
    loo = np.array([covariance_of(np.delete(Z, i, axis=0)) for i in range(n)])
    brute = np.sqrt((n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    np.testing.assert_allclose(jackknife_covariance_se(Z), brute, rtol=1e-10)


def test_ensemble_matches_exact_propagation(a1):
    ens = sample_ensemble(GaussianDual(np.zeros(4), P0_2X2), 20_000, 9, a1, ALT_GDA)
    ens = ens.advance(50)
    exact = covariance_series(a1, MapKind.SYMPLECTIC, 0.05, P0_2X2, 50).P[-1]
    Z = ens.stacked()
    assert np.all(np.abs(covariance_of(Z) - exact) <= 3 * jackknife_covariance_se(Z))


def test_ensemble_series_recording(a1):
    ens = sample_ensemble(GaussianDual(np.zeros(4), P0_2X2), 200, 0, a1, GDA)
    out = ensemble_covariance_series(ens, 20, 5, keep_samples=True)
    np.testing.assert_array_equal(out["times"], [0, 5, 10, 15, 20])
    assert out["samples"].shape == (5, 200, 4)
    assert out["final"].t == 20


def test_entropy_linear_examples(a1):
    assert abs(entropy_delta_linear(build_symplectic_map(a1, 0.1))) < 1e-12
    assert entropy_delta_linear(build_euler_map(a1, 0.1)) == pytest.approx(np.log(1.04), abs=1e-12)
    assert entropy_delta_linear(np.eye(5)) == 0.0
    assert entropy_delta_linear(np.zeros((2, 2))) == float("-inf")
    with pytest.raises(ContractViolation):
        entropy_delta_linear(np.ones((2, 3)))


def test_entropy_ledger_linear(a1):
    led = entropy_ledger_linear(build_euler_map(a1, 0.1), 100)
    np.testing.assert_allclose(led.cumulative, np.arange(1, 101) * np.log(1.04), rtol=1e-12)
    assert entropy_ledger_linear(np.zeros((2, 2)), 3).flagged


def test_mwu_increment_reduces_to_linear_for_euclidean(a1):
    ens = sample_ensemble(GaussianDual(np.zeros(4), np.eye(4)), 20, 0, a1, GDA)
    regs = a1.regularizers(RegKind.EUCLIDEAN)
    r = entropy_delta_mwu_step(a1, regs, ens, 0.1)
    assert r["increment"] == pytest.approx(entropy_delta_linear(build_euler_map(a1, 0.1)), abs=1e-12)


def test_mwu_increment_vanishes_quadratically(rps):
    patch = UniformSimplexPatch([0.03, 0.07, 0.9])
    spec = AlgorithmSpec(Rule.MWU, 0.05)
    ens = sample_ensemble(patch, 50, 0, rps, spec)
    regs = rps.regularizers(RegKind.ENTROPY)
    a = entropy_delta_mwu_step(rps, regs, ens, 1e-2)["increment"]
    b = entropy_delta_mwu_step(rps, regs, ens, 5e-3)["increment"]
    assert a > 0 and b > 0
    assert a / b == pytest.approx(4.0, rel=0.01)


def test_mwu_entropy_growth_rps(rps):
    ens = sample_ensemble(UniformSimplexPatch([0.03, 0.07, 0.9]), 200, 1, rps, AlgorithmSpec(Rule.MWU, 0.05))
    led = mwu_entropy_series(ens, 300)
    assert np.all(led.deltas > 0)
    assert np.all(led.min_det >= 1 - 1e-10)
    assert np.all(np.diff(led.cumulative) > 0)


def test_mwu_invariant_violation_detected(rps, monkeypatch):
    ens = sample_ensemble(UniformSimplexPatch([0.03, 0.07, 0.9]), 20, 1, rps, AlgorithmSpec(Rule.MWU, 0.05))
    regs = rps.regularizers(RegKind.ENTROPY)
    real = metrics.conjugate_hessian
    calls = []

    def flipped(reg, y):
        # an indefinite product of Hessians can shrink volume, which the bound forbids
        calls.append(1)
        return -real(reg, y) if len(calls) == 1 else real(reg, y)

    monkeypatch.setattr(metrics, "conjugate_hessian", flipped)
    with pytest.raises(InvariantViolation):
        entropy_delta_mwu_step(rps, regs, ens, 0.5)


def test_symplectic_eigenvalue_examples():
    np.testing.assert_allclose(symplectic_eigenvalues(np.eye(4)), [1, 1], atol=1e-12)
    np.testing.assert_allclose(symplectic_eigenvalues(np.diag([4.0, 4.0, 1.0, 1.0])), [2, 2], atol=1e-12)
    with pytest.raises(ContractViolation):
        symplectic_eigenvalues(np.eye(3))


def test_symplectic_eigenvalues_match_jp_spectrum():
    # independent route: eigenvalues of J P are +-i d_k
    ev = np.linalg.eigvals(symplectic_form(2) @ P0_2X2)
    d = np.sort(np.abs(ev.imag))[::2]
    np.testing.assert_allclose(symplectic_eigenvalues(P0_2X2), d, rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 0.3))
def test_symplectic_eigenvalues_invariant_under_symplectic_maps(seed, eta):
    rng = np.random.default_rng(seed)
    A = rng.uniform(-1, 1, (2, 2))
    B = rng.normal(size=(4, 4))
    P = B @ B.T + 0.1 * np.eye(4)
    M = build_symplectic_map(Game(A), eta).M
    np.testing.assert_allclose(symplectic_eigenvalues(M @ P @ M.T), symplectic_eigenvalues(P), rtol=1e-8)


def test_gromov_width_examples():
    assert gromov_width_linear(np.eye(4)) == pytest.approx(np.pi)
    assert gromov_width_linear(np.zeros((4, 4))) == 0.0
    d = np.sort(np.abs(np.linalg.eigvals(symplectic_form(2) @ P0_2X2).imag))[0]
    assert gromov_width_linear(P0_2X2) == pytest.approx(np.pi * d, rel=1e-10)


def test_heisenberg_equality_for_rotation():
    L = build_generator(Game(np.eye(2))).L
    times = np.linspace(0, 10, 21)
    Ps = [matrix_exponential(L, t) @ matrix_exponential(L, t).T for t in times]
    recs = heisenberg_series(times, Ps)
    for r in recs:
        np.testing.assert_allclose(r.block_det, 1.0, atol=1e-12)
        assert r.bound_block == pytest.approx(1.0)
    assert heisenberg_margin(recs) == pytest.approx(0.0, abs=1e-12)


def test_heisenberg_block_bound_symplectic_a1(a1):
    s = covariance_series(a1, MapKind.SYMPLECTIC, 0.05, P0_2X2, 10_000)
    assert heisenberg_margin(heisenberg_series(s.times, s.P)) >= -1e-8


def test_extrema_alignment_antiphase():
    t = np.linspace(0, 20 * np.pi, 2000)
    diag = extrema_alignment(2 + np.sin(t), 2 - np.sin(t))
    assert diag["aligned_fraction"] == 1.0
    assert diag["increment_correlation"] < -0.99


def test_chebyshev_examples():
    rng = np.random.default_rng(0)
    times = np.arange(0, 101, 10.0)
    X = rng.normal(size=(len(times), 500)) * times[:, None]
    Y = rng.normal(size=(len(times), 500))
    rep = chebyshev_check(times, X, Y, 3.0)
    assert rep.passed and rep.bound_X == pytest.approx(1 / 9)
    assert chebyshev_check(times, X, Y, 1e6).max_fraction_X == 0.0
    zero = chebyshev_check(times, np.zeros_like(X), np.zeros_like(Y), 2.0)
    assert zero.max_fraction_X == 0.0 and zero.max_fraction_y == 0.0
    with pytest.raises(ContractViolation):
        chebyshev_check(times, X, Y, 1.0)
    with pytest.raises(ContractViolation):
        chebyshev_check(times, X[:, :50], Y[:, :50], 2.0)


def test_chebyshev_symplectic_identity_start(a1):
    ens = sample_ensemble(GaussianDual(np.zeros(4), np.eye(4)), 1000, 3, a1, ALT_GDA)
    out = ensemble_covariance_series(ens, 2000, 20, keep_samples=True)
    S = out["samples"]
    rep = chebyshev_check(out["times"], S[:, :, 2], S[:, :, 0], 3.0)
    assert rep.max_fraction_X < 1 / 9


def test_figure1_initial_statistics(rps):
    patch = UniformSimplexPatch([0.03, 0.07, 0.9], 0.05)
    snaps = figure1_dispersion(rps, patch, [0, 150], eta=0.1, n=400, seed=0)
    assert snaps[0].var_first == pytest.approx(0.05**2 / 12, rel=0.2)
    np.testing.assert_allclose(snaps[0].mean, [0.03, 0.07, 0.9], atol=3e-3)
    assert snaps[1].var_first > 100 * snaps[0].var_first
    assert snaps[0].plottable


def test_figure1_unplottable_for_two_actions(a1):
    patch = UniformSimplexPatch([0.4, 0.6], 0.05)
    snaps = figure1_dispersion(a1, patch, [0, 5], n=50)
    assert not snaps[0].plottable and snaps[-1].points.shape == (50, 2)


def test_ensemble_samples_view(a1):
    ens = sample_ensemble(GaussianDual(np.zeros(4), np.eye(4)), 3, 0, a1, ALT_GDA)
    pairs = ens.samples
    assert len(pairs) == 3 and pairs[0][0].player == 1 and pairs[0][1].player == 2
    assert isinstance(ens.step(), Ensemble)
