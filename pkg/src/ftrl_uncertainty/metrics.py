"""Observer uncertainty: ensembles, sample covariance, entropy increments,
symplectic width / Heisenberg-type bounds and Chebyshev risk checks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    AlgorithmSpec,
    Rule,
    Scheme,
    dual_start,
    euler_arrays,
    step_primal,
    symplectic_arrays,
)
from .errors import ContractViolation, InvariantViolation
from .game import DualState, Game, PrimalState, RegKind, conjugate_hessian
from .linear import CovarianceMatrix

PSD_TOL = 1e-10
DET_J_FLOOR = 1.0 - 1e-6


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; identical seeds give bit-identical draws."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


# ------------------------------------------------------------ distributions

@dataclass(frozen=True)
class GaussianDual:
    """Gaussian law of player 1's ``(y1; X1)``; player 2 starts at ``X2 = 0, y2 = opponent_y0``."""

    mean: np.ndarray
    cov: np.ndarray
    opponent_y0: np.ndarray | None = None

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        mean = np.asarray(self.mean, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise ContractViolation(f"covariance {cov.shape} does not match mean of length {mean.size}")
        scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
        if np.max(np.abs(cov - cov.T), initial=0.0) > 1e-12 * scale:
            raise ContractViolation("covariance is not symmetric")
        if cov.size and np.linalg.eigvalsh(cov)[0] < -PSD_TOL * scale:
            raise ContractViolation("covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class UniformSimplexPatch:
    """Uniform square of side ``side`` around ``center`` on a 3-simplex.

    The square is spanned by the barycentric directions ``e1 - e2`` and
    ``e2 - e3``, so the first coordinate is uniform with variance ``side^2 / 12``.
    ``opponent_center`` (default: same as ``center``) gets an independent patch.
    """

    center: np.ndarray
    side: float = 0.05
    opponent_center: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        oc = c if self.opponent_center is None else np.asarray(self.opponent_center, dtype=float)
        for v in (c, oc):
            if v.ndim != 1 or v.size < 2 or abs(v.sum() - 1.0) > 1e-12:
                raise ContractViolation("patch center must lie on the simplex")
            if np.any(_patch_corners(v, self.side) <= 0):
                raise ContractViolation("patch leaves the simplex interior")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "opponent_center", oc)


def _patch_dirs(n):
    e = np.eye(n)
    if n == 2:
        return e[0] - e[1], np.zeros(2)
    return e[0] - e[1], e[1] - e[2]


def _patch_corners(center, side):
    a, b = _patch_dirs(center.size)
    h = side / 2
    return np.array([center + s * h * a + r * h * b for s in (-1, 1) for r in (-1, 1)])


def _patch_draw(rng, center, side, n):
    a, b = _patch_dirs(center.size)
    u = rng.uniform(-side / 2, side / 2, size=(n, 2))
    return center + u[:, :1] * a + u[:, 1:] * b


# ----------------------------------------------------------------- ensemble

@dataclass
class Ensemble:
    """Samples of both players' cumulative coordinates, advanced in lockstep.

    Arrays have shape ``(n, dim)``; ``y10``/``y20`` are the per-sample
    cumulative payoffs at time zero.
    """

    game: Game
    algorithm: AlgorithmSpec
    X1: np.ndarray
    y1: np.ndarray
    X2: np.ndarray
    y2: np.ndarray
    y10: np.ndarray
    y20: np.ndarray
    seed: int = 0
    init_spec: object = None
    t: int = 0

    def __len__(self):
        return self.X1.shape[0]

    @property
    def samples(self) -> list[tuple[DualState, DualState]]:
        return [
            (DualState(1, self.X1[k], self.y1[k], self.y10[k], self.t),
             DualState(2, self.X2[k], self.y2[k], self.y20[k], self.t))
            for k in range(len(self))
        ]

    def stacked(self, player: int = 1) -> np.ndarray:
        """``(n, 2 dim)`` array of ``(y; X)`` rows."""
        if player == 1:
            return np.hstack([self.y1, self.X1])
        return np.hstack([self.y2, self.X2])

    def step(self) -> Ensemble:
        spec = self.algorithm
        fn = symplectic_arrays if spec.scheme is Scheme.SYMPLECTIC else euler_arrays
        X1, y1, X2, y2 = fn(self.game, spec.regularizers(self.game), spec.eta,
                            self.X1, self.y1, self.X2, self.y2, self.y10, self.y20)
        return Ensemble(self.game, spec, X1, y1, X2, y2, self.y10, self.y20,
                        self.seed, self.init_spec, self.t + 1)

    def advance(self, steps: int) -> Ensemble:
        ens = self
        for _ in range(int(steps)):
            ens = ens.step()
        return ens

    def primal(self) -> PrimalState:
        """Strategies implied by the current cumulative payoffs."""
        from .game import conjugate_gradient

        r1, r2 = self.algorithm.regularizers(self.game)
        return PrimalState(conjugate_gradient(r1, self.y1), conjugate_gradient(r2, self.y2), self.t)


def _gauss_factor(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # degenerate PSD: symmetric square root keeps zero directions exactly zero
        w, V = np.linalg.eigh(cov)
        w[w < 1e-12 * max(float(w[-1]), 0.0)] = 0.0
        return V * np.sqrt(w)


def sample_ensemble(dist, n: int, seed: int, game: Game, algorithm: AlgorithmSpec) -> Ensemble:
    """Draw ``n`` independent initial conditions from ``dist``."""
    if n < 2:
        raise ContractViolation("an ensemble needs at least 2 samples")
    rng = make_rng(seed)
    if isinstance(dist, GaussianDual):
        d = game.n1
        if dist.mean.size != 2 * d:
            raise ContractViolation(f"Gaussian over (y1; X1) must have dimension {2 * d}")
        z = rng.standard_normal((n, 2 * d))
        S = dist.mean + z @ _gauss_factor(dist.cov).T
        y1, X1 = S[:, :d].copy(), S[:, d:].copy()
        y20 = np.zeros(game.n2) if dist.opponent_y0 is None else np.asarray(dist.opponent_y0, dtype=float)
        y20 = np.broadcast_to(y20, (n, game.n2)).copy()
        return Ensemble(game, algorithm, X1, y1, np.zeros((n, game.n2)), y20.copy(), y1.copy(), y20,
                        seed, dist, 0)
    if isinstance(dist, UniformSimplexPatch):
        if dist.center.size != game.n1 or dist.opponent_center.size != game.n2:
            raise ContractViolation("patch centers do not match the game's action counts")
        if algorithm.regularizer_kind is not RegKind.ENTROPY:
            raise ContractViolation("simplex patches need an entropy-regularized rule")
        x1 = _patch_draw(rng, dist.center, dist.side, n)
        x2 = _patch_draw(rng, dist.opponent_center, dist.side, n)
        s1, s2 = dual_start(algorithm, game, x1, x2)
        return Ensemble(game, algorithm, s1.X, s1.y, s2.X, s2.y, s1.y0, s2.y0, seed, dist, 0)
    raise ContractViolation(f"unknown distribution {type(dist).__name__}")


def sample_patch_strategies(patch: UniformSimplexPatch, n: int, seed: int) -> PrimalState:
    rng = make_rng(seed)
    return PrimalState(_patch_draw(rng, patch.center, patch.side, n),
                       _patch_draw(rng, patch.opponent_center, patch.side, n), 0)


# --------------------------------------------------------------- statistics

def covariance_of(Z: np.ndarray) -> np.ndarray:
    """Unbiased covariance of the rows of ``Z`` (fixed summation order)."""
    Z = np.asarray(Z, dtype=float)
    if Z.shape[0] < 2:
        raise ContractViolation("need at least 2 samples")
    D = Z - Z.mean(axis=0)
    C = D.T @ D / (Z.shape[0] - 1)
    return 0.5 * (C + C.T)


def sample_covariance(ensemble: Ensemble, player: int = 1) -> CovarianceMatrix:
    return CovarianceMatrix(covariance_of(ensemble.stacked(player)))


def jackknife_covariance_se(Z: np.ndarray) -> np.ndarray:
    """Delete-one jackknife standard error of every sample-covariance entry.

    Uses ``S_{-i} = S - n/(n-1) d_i d_i^T`` so it costs O(n m^2).
    """
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    if n < 3:
        raise ContractViolation("jackknife needs at least 3 samples")
    D = Z - Z.mean(axis=0)
    S = D.T @ D
    prods = D[:, :, None] * D[:, None, :]
    loo = (S[None] - n / (n - 1) * prods) / (n - 2)
    var = (n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0)
    return np.sqrt(var)


# ----------------------------------------------------------------- entropy

@dataclass
class EntropyLedger:
    deltas: np.ndarray
    cumulative: np.ndarray
    flagged: bool = False


def entropy_delta_linear(M) -> float:
    """``log|det M|`` in nats; ``-inf`` when ``M`` is singular (not injective)."""
    M = np.asarray(getattr(M, "M", M), dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ContractViolation("entropy change needs a square map")
    if not np.all(np.isfinite(M)):
        raise ContractViolation("map has non-finite entries")
    sign, logdet = np.linalg.slogdet(M)
    return float("-inf") if sign == 0 else float(logdet)


def entropy_ledger_linear(M, steps: int) -> EntropyLedger:
    """Per-step and cumulative differential-entropy change under repeated ``M``."""
    d = entropy_delta_linear(M)
    deltas = np.full(int(steps), d)
    return EntropyLedger(deltas, np.cumsum(deltas), flagged=not np.isfinite(d))


def euler_jacobian_dets(game: Game, regs, eta: float, X1, y1, y20) -> np.ndarray:
    """``det(I + eta^2 H1 A H2 A^T)`` per sample for player 1's Euler map.

    ``H1 = hess h1*(y1)``, ``H2 = hess h2*(y2(0) - A^T X1)``.
    """
    r1, r2 = regs
    A = game.A
    H1 = conjugate_hessian(r1, y1)
    H2 = conjugate_hessian(r2, y20 - X1 @ A)
    K = H1 @ (A @ H2 @ A.T)
    J = np.eye(game.n1) + eta**2 * K
    return np.linalg.det(J)


def entropy_delta_mwu_step(game: Game, regs, ensemble: Ensemble, eta: float) -> dict:
    """Monte-Carlo estimate of ``E[log det J]`` for one Euler (MWU) step.

    Returns the mean increment and the smallest per-sample determinant; a
    determinant below ``1 - 1e-6`` raises :class:`InvariantViolation`.
    """
    if len(ensemble) == 0:
        raise ContractViolation("empty ensemble")
    dets = euler_jacobian_dets(game, regs, eta, ensemble.X1, ensemble.y1, ensemble.y20)
    dmin = float(np.min(dets))
    if dmin < DET_J_FLOOR:
        raise InvariantViolation(f"det J = {dmin} < 1 at t={ensemble.t}")
    return {"increment": float(np.mean(np.log(dets))), "min_det": dmin, "t": ensemble.t}


def mwu_entropy_series(ensemble: Ensemble, steps: int) -> EntropyLedger:
    regs = ensemble.algorithm.regularizers(ensemble.game)
    eta = ensemble.algorithm.eta
    deltas, mins = [], []
    ens = ensemble
    for _ in range(int(steps)):
        r = entropy_delta_mwu_step(ensemble.game, regs, ens, eta)
        deltas.append(r["increment"])
        mins.append(r["min_det"])
        ens = ens.step()
    led = EntropyLedger(np.array(deltas), np.cumsum(deltas))
    led.min_det = np.array(mins)
    return led


# ------------------------------------------------------ symplectic geometry

def symplectic_form(n: int) -> np.ndarray:
    """Standard ``J = [[0, I], [-I, 0]]`` pairing ``y_alpha`` with ``X_alpha``."""
    I = np.eye(n)
    Z = np.zeros((n, n))
    return np.block([[Z, I], [-I, Z]])


def symplectic_eigenvalues(P) -> np.ndarray:
    """Williamson symplectic eigenvalues of a PSD matrix, ascending.

    Computed as the positive spectrum of the Hermitian matrix
    ``i P^{1/2} J P^{1/2}``, which equals the moduli of the eigenvalues of ``J P``.
    """
    P = np.asarray(getattr(P, "P", P), dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] % 2:
        raise ContractViolation(f"need a square matrix of even size, got {P.shape}")
    n = P.shape[0] // 2
    w, V = np.linalg.eigh(0.5 * (P + P.T))
    R = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T
    K = R @ symplectic_form(n) @ R
    ev = np.linalg.eigvalsh(1j * K)
    return np.clip(np.sort(ev)[n:], 0.0, None)


def gromov_width_linear(P) -> float:
    """Linear symplectic width of the covariance ellipsoid: ``pi * d_min``."""
    return float(np.pi * symplectic_eigenvalues(P)[0])


@dataclass
class HeisenbergRecord:
    t: float
    dX: np.ndarray
    dy: np.ndarray
    product: np.ndarray
    block_det: np.ndarray
    bound_block: float
    bound_product: float


def heisenberg_record(P, t: float, width: float) -> HeisenbergRecord:
    P = np.asarray(getattr(P, "P", P), dtype=float)
    n = P.shape[0] // 2
    vy = np.diag(P)[:n]
    vX = np.diag(P)[n:]
    cyx = P[np.arange(n), n + np.arange(n)]
    dy = np.sqrt(np.clip(vy, 0.0, None))
    dX = np.sqrt(np.clip(vX, 0.0, None))
    with np.errstate(over="ignore", invalid="ignore"):
        product, block_det = dX * dy, vy * vX - cyx**2
    return HeisenbergRecord(
        t=float(t), dX=dX, dy=dy, product=product, block_det=block_det,
        bound_block=(width / np.pi) ** 2, bound_product=width / (np.pi * np.sqrt(2.0)),
    )


def heisenberg_series(times, covariances, P0=None) -> list[HeisenbergRecord]:
    """Heisenberg records for each ``(t, P(t))``; the width is taken from ``P0``
    (default: the first covariance)."""
    covariances = [np.asarray(getattr(P, "P", P), dtype=float) for P in covariances]
    P0 = covariances[0] if P0 is None else np.asarray(getattr(P0, "P", P0), dtype=float)
    width = gromov_width_linear(P0)
    return [heisenberg_record(P, t, width) for t, P in zip(times, covariances)]


def heisenberg_margin(records) -> float:
    """Smallest ``block_det - (w_L / pi)^2`` over all records and coordinates."""
    return float(min(np.min(r.block_det) - r.bound_block for r in records))


def extrema_alignment(dX: np.ndarray, dy: np.ndarray, window: int = 2) -> dict:
    """Diagnostic for anti-phase oscillation of two standard-deviation curves.

    Reports the fraction of local minima of ``dX`` lying within ``window``
    samples of a local maximum of ``dy``, and the correlation of their
    increments (negative means they move in opposite directions).
    """
    dX = np.asarray(dX, dtype=float)
    dy = np.asarray(dy, dtype=float)

    def extrema(v, kind):
        mid = v[1:-1]
        if kind == "min":
            idx = np.where((mid < v[:-2]) & (mid < v[2:]))[0]
        else:
            idx = np.where((mid > v[:-2]) & (mid > v[2:]))[0]
        return idx + 1

    mins = extrema(dX, "min")
    maxs = extrema(dy, "max")
    hits = sum(1 for m in mins if maxs.size and np.min(np.abs(maxs - m)) <= window)
    a, b = np.diff(dX), np.diff(dy)
    corr = float(np.corrcoef(a, b)[0, 1]) if a.std() > 0 and b.std() > 0 else float("nan")
    return {
        "minima_X": int(mins.size),
        "maxima_y": int(maxs.size),
        "aligned_fraction": hits / mins.size if mins.size else float("nan"),
        "increment_correlation": corr,
    }


# --------------------------------------------------------------- chebyshev

@dataclass
class ChebyshevReport:
    k: float
    c_X: float
    c_y: float
    times: np.ndarray
    fraction_X: np.ndarray
    fraction_y: np.ndarray
    bound_X: float
    bound_y: float

    @property
    def max_fraction_X(self) -> float:
        return float(np.max(self.fraction_X)) if self.fraction_X.size else 0.0

    @property
    def max_fraction_y(self) -> float:
        return float(np.max(self.fraction_y)) if self.fraction_y.size else 0.0

    @property
    def passed(self) -> bool:
        return self.max_fraction_X <= self.bound_X and self.max_fraction_y <= self.bound_y


def chebyshev_check(times, X_samples, y_samples, k: float, c: float | None = None,
                    c_y: float | None = None) -> ChebyshevReport:
    """Empirical tail frequencies against Chebyshev-type bounds.

    ``X_samples`` and ``y_samples`` have shape ``(T, n)`` (one coordinate over
    time). Unless given, ``c`` is calibrated as ``max_t Var(X(t)) / t^2`` and
    ``c_y`` as ``max_t Var(y(t))``, so that ``P(|X - mu| > k sqrt(c) t) <= 1/k^2``
    and ``P(|y - mu| > k) <= c_y / k^2``. Only ``t > 0`` is checked.
    """
    if not k > 1:
        raise ContractViolation(f"k must exceed 1, got {k}")
    times = np.asarray(times, dtype=float)
    X = np.asarray(X_samples, dtype=float)
    Y = np.asarray(y_samples, dtype=float)
    keep = times > 0
    times, X, Y = times[keep], X[keep], Y[keep]
    if X.shape[1] < 100:
        raise ContractViolation("Chebyshev check needs at least 100 samples")
    varX = X.var(axis=1, ddof=1)
    varY = Y.var(axis=1, ddof=1)
    if c is None:
        c = float(np.max(varX / times**2))
    if c_y is None:
        c_y = float(np.max(varY))
    devX = np.abs(X - X.mean(axis=1, keepdims=True))
    devY = np.abs(Y - Y.mean(axis=1, keepdims=True))
    fX = np.mean(devX > k * np.sqrt(c) * times[:, None], axis=1)
    fY = np.mean(devY > k, axis=1)
    return ChebyshevReport(k, c, c_y, times, fX, fY, 1.0 / k**2, c_y / k**2)


# ----------------------------------------------------------------- figure 1

@dataclass
class DispersionSnapshot:
    t: int
    points: np.ndarray
    mean: np.ndarray
    var_first: float
    plottable: bool = True


def figure1_dispersion(game: Game, patch: UniformSimplexPatch, times, eta: float = 0.05,
                       n: int = 400, seed: int = 0, rule: Rule = Rule.ALT_MWU) -> list[DispersionSnapshot]:
    """Snapshots of a primal AltMWU ensemble started in a simplex patch.

    Records player 1's strategies, their mean and the sample variance of the
    first pure strategy at each requested iteration.
    """
    spec = AlgorithmSpec(rule, eta)
    wanted = sorted(set(int(t) for t in times))
    state = sample_patch_strategies(patch, n, seed)
    plottable = game.n1 == 3
    out = []
    t = 0
    for target in wanted:
        while t < target:
            state = step_primal(spec, game, state)
            t += 1
        x = state.x1
        out.append(DispersionSnapshot(t, x.copy(), x.mean(axis=0), float(x[:, 0].var(ddof=1)), plottable))
    return out


def ensemble_covariance_series(ensemble: Ensemble, horizon: int, sample_every: int = 1,
                               player: int = 1, keep_samples: bool = False) -> dict:
    """Advance ``ensemble`` and record its sample covariance of ``(y; X)``.

    With ``keep_samples`` the raw stacked coordinates are returned too
    (shape ``(T, n, 2 dim)``).
    """
    times, covs, raw = [], [], []
    ens = ensemble
    for step in range(int(horizon) + 1):
        if step % sample_every == 0:
            Z = ens.stacked(player)
            times.append(ens.t)
            covs.append(covariance_of(Z))
            if keep_samples:
                raw.append(Z.copy())
        if step < horizon:
            ens = ens.step()
    out = {"times": np.array(times, dtype=float), "P": np.array(covs), "final": ens}
    if keep_samples:
        out["samples"] = np.array(raw)
    return out
