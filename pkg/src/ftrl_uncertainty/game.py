"""Zero-sum games, FTRL regularizers and the Hamiltonian of the cumulative dynamics.

All array-valued helpers accept batched input: the last axis indexes actions and
any leading axes are treated as independent samples.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DomainError

SIMPLEX_TOL = 1e-12
# strategies with an entry below this are treated as sitting on the simplex boundary
BOUNDARY_FLOOR = 1e-300


class DomainWarning(UserWarning):
    """A strategy touched the boundary of the entropy regularizer's domain."""


class RegKind(str, enum.Enum):
    EUCLIDEAN = "Euclidean"
    ENTROPY = "NegativeEntropy"


@dataclass(frozen=True)
class Regularizer:
    """FTRL regularizer ``h`` together with its strategy space.

    Euclidean is ``h(x) = 0.5 * |x|^2`` on R^n, NegativeEntropy is
    ``sum x log x`` on the probability simplex.
    """

    kind: RegKind
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "kind", RegKind(self.kind))
        if int(self.dimension) < 1:
            raise ContractViolation(f"dimension must be >= 1, got {self.dimension}")

    @property
    def on_simplex(self) -> bool:
        return self.kind is RegKind.ENTROPY


@dataclass(frozen=True)
class Game:
    """Two-player zero-sum game; ``A`` is player 1's payoff matrix."""

    A: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
            raise ContractViolation(f"payoff matrix must be 2-D and non-empty, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise DomainError("payoff matrix contains non-finite entries")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def n1(self) -> int:
        return self.A.shape[0]

    @property
    def n2(self) -> int:
        return self.A.shape[1]

    def dim(self, player: int) -> int:
        return self.n1 if _check_player(player) == 1 else self.n2

    def payoff(self, i: int, j: int) -> np.ndarray:
        """``A^(ij)``: the matrix mapping player j's strategy to player i's payoff."""
        if (i, j) == (1, 2):
            return self.A
        if (i, j) == (2, 1):
            return -self.A.T
        raise ContractViolation(f"no payoff matrix A^({i}{j}) in a two-player game")

    def gram(self, player: int = 1) -> np.ndarray:
        """``A A^T`` for player 1, ``A^T A`` for player 2."""
        if _check_player(player) == 1:
            return self.A @ self.A.T
        return self.A.T @ self.A

    def regularizers(self, kind) -> tuple[Regularizer, Regularizer]:
        return Regularizer(kind, self.n1), Regularizer(kind, self.n2)


@dataclass(frozen=True)
class DualState:
    """Cumulative coordinates of one player.

    ``X`` is the cumulative strategy, ``y`` the cumulative payoff and ``y0`` the
    cumulative payoff at time zero (the opponent's Hamiltonian depends on it).
    Arrays may carry leading sample axes.
    """

    player: int
    X: np.ndarray
    y: np.ndarray
    y0: np.ndarray
    t: float = 0

    def __post_init__(self):
        _check_player(self.player)
        for name in ("X", "y", "y0"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"DualState.{name} has non-finite entries")
            object.__setattr__(self, name, arr)
        if self.X.shape != self.y.shape:
            raise ContractViolation(f"X shape {self.X.shape} != y shape {self.y.shape}")
        if self.y0.shape[-1] != self.y.shape[-1]:
            raise ContractViolation("y0 and y have different action counts")

    @property
    def dim(self) -> int:
        return self.y.shape[-1]


@dataclass(frozen=True)
class PrimalState:
    """Instantaneous strategies of both players at iteration ``t``."""

    x1: np.ndarray
    x2: np.ndarray
    t: int = 0

    def __post_init__(self):
        for name in ("x1", "x2"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"PrimalState.{name} has non-finite entries")
            object.__setattr__(self, name, arr)

    def check_simplex(self, tol: float = SIMPLEX_TOL) -> None:
        for name in ("x1", "x2"):
            x = getattr(self, name)
            if np.any(x <= 0) or np.any(np.abs(x.sum(axis=-1) - 1.0) > tol):
                raise DomainError(f"{name} is not in the open simplex (tol={tol})")


def _check_player(player: int) -> int:
    if player not in (1, 2):
        raise ContractViolation(f"player must be 1 or 2, got {player!r}")
    return player


def _check_vector(reg: Regularizer, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 or y.shape[-1] != reg.dimension:
        raise ContractViolation(f"expected last axis of length {reg.dimension}, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise DomainError("non-finite payoff vector")
    return y


def softmax(y: np.ndarray) -> np.ndarray:
    z = y - y.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logsumexp(y: np.ndarray) -> np.ndarray:
    m = y.max(axis=-1)
    return m + np.log(np.exp(y - m[..., None]).sum(axis=-1))


def conjugate_value(reg: Regularizer, y) -> np.ndarray:
    """``h*(y)``: ``0.5 |y|^2`` (Euclidean) or log-sum-exp (entropy)."""
    y = _check_vector(reg, y)
    if reg.kind is RegKind.EUCLIDEAN:
        return 0.5 * np.sum(y * y, axis=-1)
    return logsumexp(y)


def conjugate_gradient(reg: Regularizer, y) -> np.ndarray:
    """``grad h*(y)``, i.e. the strategy played against cumulative payoff ``y``."""
    y = _check_vector(reg, y)
    if reg.kind is RegKind.EUCLIDEAN:
        return y.copy()
    return softmax(y)


def conjugate_hessian(reg: Regularizer, y) -> np.ndarray:
    """``hess h*(y)``: identity, or ``diag(p) - p p^T`` with ``p = softmax(y)``."""
    y = _check_vector(reg, y)
    n = reg.dimension
    if reg.kind is RegKind.EUCLIDEAN:
        return np.broadcast_to(np.eye(n), y.shape[:-1] + (n, n)).copy()
    p = softmax(y)
    return p[..., :, None] * np.eye(n) - p[..., :, None] * p[..., None, :]


def regularizer_gradient(reg: Regularizer, x) -> np.ndarray:
    """``grad h(x)``: maps a strategy to a cumulative payoff that induces it.

    For the entropy regularizer this is ``log x`` (defined up to an additive
    constant, which softmax ignores). Strategies with entries below 1e-300 raise
    a :class:`DomainWarning` and are not clamped.
    """
    x = _check_vector(reg, x)
    if reg.kind is RegKind.EUCLIDEAN:
        return x.copy()
    if np.any(x < BOUNDARY_FLOOR):
        warnings.warn("strategy on the simplex boundary; log is unbounded", DomainWarning, stacklevel=2)
    with np.errstate(divide="ignore"):
        return np.log(x)


def hamiltonian_value(game: Game, reg1: Regularizer, reg2: Regularizer,
                      state: DualState, y_other_initial) -> np.ndarray:
    """``H(X_i, y_i) = h*_i(y_i) + h*_j(y_j(0) + A^(ji) X_i)``."""
    i = state.player
    j = 3 - i
    regs = {1: reg1, 2: reg2}
    y_other_initial = np.asarray(y_other_initial, dtype=float)
    if y_other_initial.shape[-1] != game.dim(j):
        raise ContractViolation("y_other_initial has the wrong dimension")
    if state.dim != game.dim(i):
        raise ContractViolation("state dimension does not match the game")
    shifted = y_other_initial + state.X @ game.payoff(j, i).T
    return conjugate_value(regs[i], state.y) + conjugate_value(regs[j], shifted)


def cumulative_payoff_identity(game: Game, X_other, y_initial, player: int) -> np.ndarray:
    """Rebuild ``y_i = y_i(0) + A^(ij) X_j`` from the opponent's cumulative strategy."""
    i = _check_player(player)
    j = 3 - i
    X_other = np.asarray(X_other, dtype=float)
    y_initial = np.asarray(y_initial, dtype=float)
    if X_other.shape[-1] != game.dim(j) or y_initial.shape[-1] != game.dim(i):
        raise ContractViolation("dimension mismatch in cumulative payoff identity")
    return y_initial + X_other @ game.payoff(i, j).T
