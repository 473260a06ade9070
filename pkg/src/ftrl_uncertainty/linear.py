"""Linear maps of Euclidean-regularized FTRL and exact covariance propagation.

Coordinates are always stacked as ``(y; X)`` for one player. With the Gram
matrix ``G`` (``A A^T`` for player 1, ``A^T A`` for player 2):

* continuous generator   ``L   = [[0, -G], [I, 0]]``
* Euler one-step map     ``M_e = [[I, -eta G], [eta I, I]]``
* symplectic one-step    ``M_s = [[I, -eta G], [eta I, I - eta^2 G]]``
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ContractViolation, NumericalFailure
from .game import Game

SINGULAR_RTOL = 1e-9
SYM_TOL = 1e-12
PSD_TOL = 1e-10

# growth classifier thresholds
QUADRATIC_SLOPE = (1.7, 2.3)
EXP_MIN_R2 = 0.99
BOUNDED_TAIL_RATIO = 10.0


class MapKind(str, enum.Enum):
    CONTINUOUS = "Continuous"
    EULER = "Euler"
    SYMPLECTIC = "Symplectic"


class GrowthClass(str, enum.Enum):
    BOUNDED = "Bounded"
    QUADRATIC = "Quadratic"
    EXPONENTIAL = "Exponential"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class LinearGenerator:
    L: np.ndarray
    gram: np.ndarray
    player: int = 1

    @property
    def n(self) -> int:
        return self.gram.shape[0]


@dataclass(frozen=True)
class DiscreteLinearMap:
    M: np.ndarray
    kind: MapKind
    eta: float


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric PSD covariance over ``(y; X)``."""

    P: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ContractViolation(f"covariance must be square, got {P.shape}")
        labels = tuple(self.labels)
        if not labels and P.shape[0] % 2 == 0:
            labels = default_labels(P.shape[0] // 2)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "labels", labels)

    def check(self, sym_tol: float = SYM_TOL, psd_tol: float = PSD_TOL) -> None:
        scale = max(1.0, float(np.max(np.abs(self.P))))
        if np.max(np.abs(self.P - self.P.T)) > sym_tol * scale:
            raise ContractViolation("covariance matrix is not symmetric")
        if np.min(np.linalg.eigvalsh(self.P)) < -psd_tol * scale:
            raise ContractViolation("covariance matrix is not positive semi-definite")

    @property
    def n(self) -> int:
        return self.P.shape[0] // 2

    def var_y(self, alpha: int) -> float:
        return float(self.P[alpha, alpha])

    def var_X(self, alpha: int) -> float:
        return float(self.P[self.n + alpha, self.n + alpha])

    def block(self, alpha: int) -> np.ndarray:
        """2x2 covariance of the conjugate pair ``(y_alpha, X_alpha)``."""
        idx = [alpha, self.n + alpha]
        return self.P[np.ix_(idx, idx)]


def default_labels(n: int) -> tuple:
    return tuple(f"y{a + 1}" for a in range(n)) + tuple(f"X{a + 1}" for a in range(n))


@dataclass(frozen=True)
class GramSpectrum:
    singular: bool
    gamma: float
    min_eig: float
    eigenvalues: np.ndarray


@dataclass
class GrowthVerdict:
    growth_class: GrowthClass
    fitted_exponent_or_base: float
    gamma: float
    singular: bool
    loglog_slope: float = float("nan")
    exp_rate: float = float("nan")
    exp_r2: float = float("nan")
    tail_ratio: float = float("nan")
    truncated: bool = False
    n_used: int = 0
    predicted: GrowthClass | None = None
    predicted_base: float | None = None


@dataclass
class CovarianceSeries:
    """Covariances sampled at ``times``; ``overflow`` marks a truncated Euler run."""

    kind: MapKind
    times: np.ndarray
    P: np.ndarray
    overflow: bool = False
    labels: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.times)

    def __getitem__(self, k) -> CovarianceMatrix:
        return CovarianceMatrix(self.P[k], self.labels)

    @property
    def n(self) -> int:
        return self.P.shape[-1] // 2

    def var_X(self, alpha: int = 0) -> np.ndarray:
        return self.P[:, self.n + alpha, self.n + alpha]

    def var_y(self, alpha: int = 0) -> np.ndarray:
        return self.P[:, alpha, alpha]


def gram_singularity(game: Game, player: int = 1) -> GramSpectrum:
    eig = np.linalg.eigvalsh(game.gram(player))
    gamma = float(eig[-1])
    min_eig = float(eig[0])
    singular = min_eig < SINGULAR_RTOL * max(1.0, gamma)
    return GramSpectrum(singular=singular, gamma=gamma, min_eig=min_eig, eigenvalues=eig)


def build_generator(game: Game, player: int = 1) -> LinearGenerator:
    G = game.gram(player)
    n = G.shape[0]
    L = np.block([[np.zeros((n, n)), -G], [np.eye(n), np.zeros((n, n))]])
    return LinearGenerator(L=L, gram=G, player=player)


def build_euler_map(game: Game, eta: float, player: int = 1) -> DiscreteLinearMap:
    G = game.gram(player)
    n = G.shape[0]
    I = np.eye(n)
    M = np.block([[I, -eta * G], [eta * I, I]])
    return DiscreteLinearMap(M=M, kind=MapKind.EULER, eta=eta)


def build_symplectic_map(game: Game, eta: float, player: int = 1) -> DiscreteLinearMap:
    G = game.gram(player)
    n = G.shape[0]
    I = np.eye(n)
    M = np.block([[I, -eta * G], [eta * I, I - eta**2 * G]])
    return DiscreteLinearMap(M=M, kind=MapKind.SYMPLECTIC, eta=eta)


def build_map(game: Game, kind, eta: float, player: int = 1) -> DiscreteLinearMap:
    kind = MapKind(kind)
    if kind is MapKind.EULER:
        return build_euler_map(game, eta, player)
    if kind is MapKind.SYMPLECTIC:
        return build_symplectic_map(game, eta, player)
    raise ContractViolation("continuous flow has no one-step map; use matrix_exponential")


def matrix_exponential(L, t: float) -> np.ndarray:
    """``exp(t L)`` by scaled-and-squared Pade approximation (scipy)."""
    L = L.L if isinstance(L, LinearGenerator) else np.asarray(L, dtype=float)
    if not np.isfinite(t):
        raise ContractViolation(f"t must be finite, got {t}")
    with np.errstate(over="ignore", invalid="ignore"):
        E = scipy.linalg.expm(t * L)
    if not np.all(np.isfinite(E)):
        raise NumericalFailure(f"matrix exponential overflowed at t={t}")
    return E


def propagate_covariance(P0, M) -> CovarianceMatrix:
    P = P0.P if isinstance(P0, CovarianceMatrix) else np.asarray(P0, dtype=float)
    M = M.M if isinstance(M, DiscreteLinearMap) else np.asarray(M, dtype=float)
    if M.shape[1] != P.shape[0] or M.shape[0] != M.shape[1]:
        raise ContractViolation(f"map shape {M.shape} incompatible with covariance {P.shape}")
    Q = M @ P @ M.T
    labels = P0.labels if isinstance(P0, CovarianceMatrix) else ()
    return CovarianceMatrix(0.5 * (Q + Q.T), labels)


def covariance_series(game: Game, kind, eta: float, P0, horizon, sample_every=1,
                      player: int = 1) -> CovarianceSeries:
    """Exact covariance of ``(y; X)`` over time.

    Discrete kinds iterate the one-step map and record every ``sample_every``
    steps up to ``horizon`` steps. ``Continuous`` evaluates ``exp(tL)`` at
    ``t = 0, sample_every, ...`` up to ``horizon`` (time units).
    """
    kind = MapKind(kind)
    P0 = P0 if isinstance(P0, CovarianceMatrix) else CovarianceMatrix(P0)
    if horizon < 0 or sample_every <= 0:
        raise ContractViolation("horizon must be >= 0 and sample_every > 0")
    P = P0.P.copy()
    if P.shape[0] != 2 * game.dim(player):
        raise ContractViolation(f"P0 must be {2 * game.dim(player)}-dimensional for player {player}")

    if kind is MapKind.CONTINUOUS:
        gen = build_generator(game, player)
        count = int(np.floor(horizon / sample_every + 1e-9))
        times = np.arange(count + 1) * float(sample_every)
        out = np.empty((len(times),) + P.shape)
        for k, t in enumerate(times):
            E = matrix_exponential(gen, t)
            Q = E @ P @ E.T
            out[k] = 0.5 * (Q + Q.T)
        return CovarianceSeries(kind, times, out, False, P0.labels)

    M = build_map(game, kind, eta, player).M
    times = [0]
    out = [P.copy()]
    overflow = False
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, int(horizon) + 1):
            Q = M @ P @ M.T
            P = 0.5 * (Q + Q.T)
            if not np.all(np.isfinite(P)):
                overflow = True
                break
            if step % sample_every == 0:
                times.append(step)
                out.append(P.copy())
    return CovarianceSeries(kind, np.asarray(times, dtype=float), np.asarray(out), overflow, P0.labels)


def _linfit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least squares ``y ~ a + b x``; returns (slope, intercept, R^2)."""
    b, a = np.polyfit(x, y, 1)
    resid = y - (a + b * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    return float(b), float(a), r2


def theoretical_growth(kind, singular: bool, coordinate: str, gamma: float = 0.0,
                       eta: float = 0.0) -> tuple[GrowthClass, float | None]:
    """Growth class predicted from the Gram spectrum and map kind alone.

    ``coordinate`` is ``"X"`` or ``"y"``. For Euler the predicted per-step
    covariance base ``1 + gamma eta^2`` is returned as the second element.
    """
    kind = MapKind(kind)
    if kind is MapKind.EULER:
        return GrowthClass.EXPONENTIAL, 1.0 + gamma * eta**2
    if coordinate == "X" and singular:
        return GrowthClass.QUADRATIC, None
    return GrowthClass.BOUNDED, None


def classify_growth(times, values, gamma: float, eta: float, *, singular: bool | None = None,
                    kind=None, coordinate: str = "X") -> GrowthVerdict:
    """Classify a variance series as Bounded, Quadratic or Exponential.

    Fits on the tail half of the finite prefix: log-log slope in [1.7, 2.3] is
    Quadratic; otherwise a positive log-linear slope with R^2 > 0.99 and a tail
    spread of at least 10x is Exponential (base ``exp(slope)`` per unit of
    ``times``); otherwise a tail max/median below 10 is Bounded.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    if times.shape != values.shape:
        raise ContractViolation("times and values differ in length")
    finite = np.isfinite(values)
    truncated = not bool(finite.all())
    if truncated:
        stop = int(np.argmin(finite))
        times, values = times[:stop], values[:stop]
    if len(values) < 50:
        raise ContractViolation(f"need >= 50 finite samples, got {len(values)}")
    positive_t = times[times > 0]
    if len(positive_t) == 0 or positive_t.max() < 10 * positive_t.min():
        raise ContractViolation("series must span at least one decade of t")

    tail = slice(len(values) // 2, None)
    tt, vv = times[tail], values[tail]
    ok = (tt > 0) & (vv > 0)
    loglog = _linfit(np.log(tt[ok]), np.log(vv[ok]))[0] if ok.sum() >= 2 else float("nan")
    rate, _, r2 = _linfit(tt[vv > 0], np.log(vv[vv > 0])) if (vv > 0).sum() >= 2 else (float("nan"),) * 3
    med = float(np.median(vv))
    tail_ratio = float(np.max(vv) / med) if med > 0 else (1.0 if np.max(vv) == 0 else float("inf"))

    if QUADRATIC_SLOPE[0] <= loglog <= QUADRATIC_SLOPE[1]:
        cls, fitted = GrowthClass.QUADRATIC, loglog
    elif rate > 0 and r2 > EXP_MIN_R2 and tail_ratio >= BOUNDED_TAIL_RATIO:
        cls, fitted = GrowthClass.EXPONENTIAL, float(np.exp(rate))
    elif tail_ratio < BOUNDED_TAIL_RATIO:
        cls, fitted = GrowthClass.BOUNDED, tail_ratio
    else:
        cls, fitted = GrowthClass.UNCLASSIFIED, loglog

    predicted = predicted_base = None
    if kind is not None and singular is not None:
        predicted, predicted_base = theoretical_growth(kind, singular, coordinate, gamma, eta)
    return GrowthVerdict(
        growth_class=cls, fitted_exponent_or_base=fitted, gamma=gamma,
        singular=bool(singular) if singular is not None else False,
        loglog_slope=loglog, exp_rate=rate, exp_r2=r2, tail_ratio=tail_ratio,
        truncated=truncated, n_used=len(values), predicted=predicted, predicted_base=predicted_base,
    )
