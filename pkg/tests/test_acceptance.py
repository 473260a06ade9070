"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line.

Run directly with ``python3 tests/test_acceptance.py`` or through pytest.
"""

import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
import scipy.linalg

from ftrl_uncertainty import cli
from ftrl_uncertainty.dynamics import AlgorithmSpec, Rule, check_primal_dual_equivalence
from ftrl_uncertainty.game import Game, RegKind
from ftrl_uncertainty.linear import GrowthClass, MapKind, classify_growth, covariance_series
from ftrl_uncertainty.metrics import (
    GaussianDual,
    UniformSimplexPatch,
    chebyshev_check,
    covariance_of,
    entropy_delta_linear,
    entropy_delta_mwu_step,
    figure1_dispersion,
    heisenberg_series,
    jackknife_covariance_se,
    sample_ensemble,
)
from ftrl_uncertainty.linear import build_euler_map, build_symplectic_map

RPS = [[0, -1, 1], [1, 0, -1], [-1, 1, 0]]
A1 = [[1, -1], [-1, 1]]
A4 = [[1, -2], [-1, 1]]
B4 = [[1, -1.1], [-1, 1]]
C1 = [[1, -1.31], [-1, 1.31]]
P0 = np.array([[8, 2, 1, 3], [2, 13, 7, 9], [1, 7, 9, 2], [3, 9, 2, 10]], dtype=float)
HORIZON = 10_000


def gram_eigs_2x2(A):
    """Closed-form eigenvalues of A A^T for a 2x2 matrix."""
    A = np.asarray(A, dtype=float)
    G = A @ A.T
    half = np.trace(G) / 2
    disc = np.sqrt(max(half**2 - np.linalg.det(G), 0.0))
    return half - disc, half + disc


def symplectic_dmin_oracle(P):
    """Smallest modulus among the eigenvalues of J P (independent of the library)."""
    n = P.shape[0] // 2
    J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
    return float(np.min(np.abs(np.linalg.eigvals(J @ P))))


def tail_loglog_slope(t, v):
    half = len(t) // 2
    return float(np.polyfit(np.log(t[half:]), np.log(v[half:]), 1)[0])


def continuous_flow(A, t):
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    L = np.block([[np.zeros((n, n)), -A @ A.T], [np.eye(n), np.zeros((n, n))]])
    return scipy.linalg.expm(t * L)


# ------------------------------------------------------------------ criteria

def criterion_1():
    rps = Game(RPS)
    x1, x2 = [0.5, 0.3, 0.2], [0.2, 0.5, 0.3]
    start = time.perf_counter()
    devs = {rule.value: check_primal_dual_equivalence(rps, AlgorithmSpec(rule, 0.05), 1000, x1, x2)["max_deviation"]
            for rule in (Rule.MWU, Rule.ALT_MWU)}
    elapsed = time.perf_counter() - start
    ok = max(devs.values()) < 1e-9 and elapsed < 1.0
    return ok, f"max deviation MWU {devs['MWU']:.2e}, AltMWU {devs['AltMWU']:.2e}; {elapsed:.2f}s"


def criterion_2():
    start = time.perf_counter()
    parts = []
    ok = True
    runs = (("continuous", MapKind.CONTINUOUS, 10), ("symplectic", MapKind.SYMPLECTIC, 10))
    for name, kind, every in runs:
        s = covariance_series(Game(A1), kind, 0.05, P0, HORIZON, every)
        t = s.times[1:]
        slope = tail_loglog_slope(t, s.var_X(0)[1:])
        vy = s.var_y(0)[len(s.times) // 2:]
        ratio = float(vy.max() / np.median(vy))
        ok = ok and 1.8 <= slope <= 2.2 and ratio < 5
        parts.append(f"{name}: slope {slope:.3f}, y tail ratio {ratio:.2f}")
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 5.0
    return ok, "; ".join(parts) + f"; {elapsed:.2f}s"


def criterion_3():
    parts = []
    ok = True
    for name, A, kind in (("A4 continuous", A4, MapKind.CONTINUOUS), ("B4 symplectic", B4, MapKind.SYMPLECTIC)):
        lo, hi = gram_eigs_2x2(A)
        s = covariance_series(Game(A), kind, 0.05, P0, HORIZON, 10)
        for coord, v in (("X", s.var_X(0)), ("y", s.var_y(0))):
            verdict = classify_growth(s.times, v, hi, 0.05)
            ok = ok and verdict.growth_class is GrowthClass.BOUNDED
            parts.append(f"{name} Var({coord}11) {verdict.growth_class.value}")
    return ok, "; ".join(parts)


def criterion_4():
    eta = 0.1
    parts = []
    ok = True
    for name, A in (("C1", C1), ("A1", A1)):
        gamma = gram_eigs_2x2(A)[1]
        base = 1 + gamma * eta**2
        s = covariance_series(Game(A), MapKind.EULER, eta, P0, HORIZON, 10)
        for coord, v in (("X", s.var_X(0)), ("y", s.var_y(0))):
            verdict = classify_growth(s.times, v, gamma, eta)
            fitted = verdict.fitted_exponent_or_base
            good = verdict.growth_class is GrowthClass.EXPONENTIAL and abs(fitted - base) <= 0.05 * base
            ok = ok and good
            parts.append(f"{name} Var({coord}11) {verdict.growth_class.value} base {fitted:.5f} vs {base:.5f}")
    return ok, "; ".join(parts)


def criterion_5():
    eta = 0.05
    a1 = Game(A1)
    # alternating: per-step log|det| accumulated over the horizon
    d_alt = entropy_delta_linear(build_symplectic_map(a1, eta))
    cum_alt = np.cumsum(np.full(HORIZON, d_alt))
    alt_ok = np.max(np.abs(cum_alt)) <= 1e-10
    # simultaneous: closed form det(I + eta^2 G) = 1 + eta^2 tr G + eta^4 det G
    G = np.asarray(A1, float) @ np.asarray(A1, float).T
    slope = np.log(1 + eta**2 * np.trace(G) + eta**4 * np.linalg.det(G))
    d_sim = entropy_delta_linear(build_euler_map(a1, eta))
    t = np.arange(1, HORIZON + 1)
    cum_sim = np.cumsum(np.full(HORIZON, d_sim))
    sim_err = float(np.max(np.abs(cum_sim - t * slope) / (t * slope)))
    sim_ok = sim_err <= 1e-9
    # MWU Monte Carlo along an RPS ensemble
    rps = Game(RPS)
    spec = AlgorithmSpec(Rule.MWU, eta)
    ens = sample_ensemble(UniformSimplexPatch([0.03, 0.07, 0.9]), 500, 0, rps, spec)
    regs = rps.regularizers(RegKind.ENTROPY)
    incs, mins = [], []
    for _ in range(1000):
        r = entropy_delta_mwu_step(rps, regs, ens, eta)
        incs.append(r["increment"])
        mins.append(r["min_det"])
        ens = ens.step()
    mwu_ok = min(incs) > 0 and min(mins) >= 1 - 1e-8
    ok = alt_ok and sim_ok and mwu_ok
    return ok, (f"AltGDA max |cum| {np.max(np.abs(cum_alt)):.1e}; GDA max rel err {sim_err:.1e}; "
                f"MWU min increment {min(incs):.2e}, min det {min(mins):.12f}")


def criterion_6():
    s = covariance_series(Game(A1), MapKind.SYMPLECTIC, 0.05, P0, HORIZON, 1)
    bound = symplectic_dmin_oracle(P0) ** 2
    recs = heisenberg_series(s.times, s.P, P0)
    margin = min(float(np.min(r.block_det)) for r in recs) - bound
    # library width must agree with the oracle too
    lib_bound = recs[0].bound_block
    ok = margin >= -1e-8 and abs(lib_bound - bound) <= 1e-10 * bound
    return ok, f"min block det - (w_L/pi)^2 = {margin:.6g}, (w_L/pi)^2 = {bound:.6g}"


def criterion_7():
    start = time.perf_counter()
    a1 = Game(A1)
    spec = AlgorithmSpec(Rule.ALT_GDA, 0.05)
    ens = sample_ensemble(GaussianDual(np.zeros(4), P0), 100_000, 2024, a1, spec).advance(200)
    Z = ens.stacked()
    S = covariance_of(Z)
    se = jackknife_covariance_se(Z)
    M = build_symplectic_map(a1, 0.05).M
    exact = P0.copy()
    for _ in range(200):
        exact = M @ exact @ M.T
    z = np.abs(S - exact) / se
    elapsed = time.perf_counter() - start
    ok = bool(np.all(z <= 3)) and elapsed < 30
    return ok, f"max |sample - exact| / SE = {z.max():.2f}; {elapsed:.1f}s"


def criterion_8():
    parts = []
    ok = True
    a1 = Game(A1)
    n = 1000
    times = np.arange(0, HORIZON + 1, 10, dtype=float)
    # symplectic ensemble advanced by the dual stepper
    ens = sample_ensemble(GaussianDual(np.zeros(4), P0), n, 8, a1, AlgorithmSpec(Rule.ALT_GDA, 0.05))
    snaps = []
    for step in range(HORIZON + 1):
        if step % 10 == 0:
            snaps.append(ens.stacked().copy())
        if step < HORIZON:
            ens = ens.step()
    sym = np.array(snaps)
    # continuous ensemble pushed through the exact flow
    Z0 = sample_ensemble(GaussianDual(np.zeros(4), P0), n, 9, a1, AlgorithmSpec(Rule.ALT_GDA, 0.05)).stacked()
    cont = np.array([Z0 @ continuous_flow(A1, t).T for t in times])
    for name, S in (("continuous", cont), ("symplectic", sym)):
        for k in (2.0, 3.0, 5.0):
            rep = chebyshev_check(times, S[:, :, 2], S[:, :, 0], k)
            ok = ok and rep.max_fraction_X <= 1 / k**2 and rep.max_fraction_y <= rep.bound_y
            parts.append(f"{name} k={k:g}: X {rep.max_fraction_X:.3f}<={1 / k**2:.3f}")
    return ok, "; ".join(parts)


def criterion_9():
    snaps = figure1_dispersion(Game(RPS), UniformSimplexPatch([0.03, 0.07, 0.9], 0.05), [0, 200],
                               eta=0.05, n=400, seed=0)
    v0, v200 = snaps[0].var_first, snaps[1].var_first
    oracle = 0.05**2 / 12
    ok = abs(v0 - oracle) <= 0.2 * oracle and v200 >= 100 * v0
    return ok, f"Var(x11) t=0 {v0:.4e} (oracle {oracle:.4e}); growth {v200 / v0:.1f}x at t=200"


def criterion_10():
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a", Path(tmp) / "b"
        ra = cli.main(["verify", "--out", str(a), "--seed", "0"])
        rb = cli.main(["verify", "--out", str(b), "--seed", "0"])
        same = (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    return same and ra == 0 and rb == 0, f"manifests identical: {same}; exit codes {ra}, {rb}"


CRITERIA = {
    1: ("primal-dual equivalence", criterion_1),
    2: ("singular growth (continuous, symplectic)", criterion_2),
    3: ("nonsingular bounded", criterion_3),
    4: ("Euler exponential base", criterion_4),
    5: ("entropy ledger", criterion_5),
    6: ("Heisenberg block bound", criterion_6),
    7: ("Monte Carlo vs exact", criterion_7),
    8: ("Chebyshev", criterion_8),
    9: ("figure-1 dispersion", criterion_9),
    10: ("determinism", criterion_10),
}


def report(number):
    name, fn = CRITERIA[number]
    ok, detail = fn()
    return ok, f"{'PASS' if ok else 'FAIL'} criterion {number} ({name}): {detail}"


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    ok, line = report(number)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = []
    for number in sorted(CRITERIA):
        ok, line = report(number)
        print(line, flush=True)
        results.append(ok)
    sys.exit(0 if all(results) else 1)
