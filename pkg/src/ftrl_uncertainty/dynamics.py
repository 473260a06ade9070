"""Primal update rules, their dual (cumulative-coordinate) discretizations and the continuous flow.

Player 1 is discretized with the Type I symplectic Euler scheme (payoff first,
then cumulative strategy) and player 2 with Type II (strategy first). Under
that pairing the symplectic dual iterates reproduce the alternating primal
rules exactly, and the Euler dual iterates reproduce the simultaneous ones.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DomainError, IntegrationFailure
from .game import (
    DualState,
    Game,
    PrimalState,
    RegKind,
    Regularizer,
    conjugate_gradient,
    regularizer_gradient,
    softmax,
)
from .linear import build_generator, matrix_exponential

DEFAULT_ETA = 0.05
DEFAULT_RK4_DT = 1e-3
SIMPLEX_CHECK_TOL = 1e-10


class Rule(str, enum.Enum):
    GDA = "GDA"
    ALT_GDA = "AltGDA"
    MWU = "MWU"
    ALT_MWU = "AltMWU"
    CONTINUOUS = "ContinuousFTRL"


_RULE_KIND = {
    Rule.GDA: RegKind.EUCLIDEAN,
    Rule.ALT_GDA: RegKind.EUCLIDEAN,
    Rule.MWU: RegKind.ENTROPY,
    Rule.ALT_MWU: RegKind.ENTROPY,
}


class Scheme(str, enum.Enum):
    EULER = "Euler"
    SYMPLECTIC = "Symplectic"


@dataclass(frozen=True)
class AlgorithmSpec:
    rule: Rule
    eta: float = DEFAULT_ETA
    regularizer_kind: RegKind | None = None

    def __post_init__(self):
        rule = Rule(self.rule)
        object.__setattr__(self, "rule", rule)
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise ContractViolation(f"step size must be positive, got {self.eta}")
        kind = self.regularizer_kind
        if kind is None:
            kind = _RULE_KIND.get(rule, RegKind.EUCLIDEAN)
        kind = RegKind(kind)
        if rule in _RULE_KIND and _RULE_KIND[rule] is not kind:
            raise ContractViolation(f"{rule.value} requires the {_RULE_KIND[rule].value} regularizer")
        object.__setattr__(self, "regularizer_kind", kind)

    @property
    def alternating(self) -> bool:
        return self.rule in (Rule.ALT_GDA, Rule.ALT_MWU)

    @property
    def scheme(self) -> Scheme:
        """Dual discretization equivalent to this primal rule."""
        if self.rule is Rule.CONTINUOUS:
            raise ContractViolation("continuous FTRL has no discrete scheme")
        return Scheme.SYMPLECTIC if self.alternating else Scheme.EULER

    def regularizers(self, game: Game) -> tuple[Regularizer, Regularizer]:
        return game.regularizers(self.regularizer_kind)

    def step_size_warnings(self, game: Game) -> list[str]:
        """Check ``eta < min(1, 1/|A|_2^2)`` for simultaneous MWU (entropy growth bound)."""
        if self.rule is not Rule.MWU:
            return []
        bound = min(1.0, 1.0 / np.linalg.norm(game.A, 2) ** 2)
        if self.eta >= bound:
            return [f"eta={self.eta} violates eta < min(1, 1/|A|_2^2) = {bound:.6g}"]
        return []


@dataclass
class Trajectory:
    """Recorded primal and dual states; ``dual`` maps player -> list of DualState."""

    algorithm: AlgorithmSpec
    primal: list = field(default_factory=list)
    dual: dict = field(default_factory=lambda: {1: [], 2: []})
    horizon: float = 0

    def times(self) -> np.ndarray:
        seq = self.dual[1] if self.dual[1] else self.primal
        return np.array([s.t for s in seq], dtype=float)

    def X(self, player: int) -> np.ndarray:
        return np.stack([s.X for s in self.dual[player]])

    def y(self, player: int) -> np.ndarray:
        return np.stack([s.y for s in self.dual[player]])

    def x(self, player: int) -> np.ndarray:
        return np.stack([getattr(s, f"x{player}") for s in self.primal])


# ---------------------------------------------------------------- primal rules

def _mw(x, payoff, eta):
    # x * exp(eta * payoff) renormalised, shifted for overflow safety
    logits = np.log(x) + eta * payoff
    return softmax(logits)


def step_primal(spec: AlgorithmSpec, game: Game, state: PrimalState) -> PrimalState:
    """One round of GDA, AltGDA, MWU or AltMWU.

    Simultaneous rules use round t-1 feedback for both players. Alternating
    rules move player 2 first and player 1 answers the fresh ``x2``.
    """
    A, eta = game.A, spec.eta
    x1, x2 = state.x1, state.x2
    rule = spec.rule
    if rule is Rule.GDA:
        n1 = x1 + eta * (x2 @ A.T)
        n2 = x2 - eta * (x1 @ A)
    elif rule is Rule.ALT_GDA:
        n2 = x2 - eta * (x1 @ A)
        n1 = x1 + eta * (n2 @ A.T)
    elif rule is Rule.MWU:
        n1 = _mw(x1, x2 @ A.T, eta)
        n2 = _mw(x2, -(x1 @ A), eta)
    elif rule is Rule.ALT_MWU:
        n2 = _mw(x2, -(x1 @ A), eta)
        n1 = _mw(x1, n2 @ A.T, eta)
    else:
        raise ContractViolation("step_primal needs a discrete rule")
    out = PrimalState(n1, n2, state.t + 1)
    if spec.regularizer_kind is RegKind.ENTROPY:
        for x in (out.x1, out.x2):
            if np.any(x < 0) or np.any(np.abs(x.sum(axis=-1) - 1.0) > SIMPLEX_CHECK_TOL):
                raise RuntimeError("MWU iterate left the simplex")
    return out


def run_primal(spec: AlgorithmSpec, game: Game, start: PrimalState, horizon: int) -> Trajectory:
    traj = Trajectory(spec, [start], {1: [], 2: []}, horizon)
    state = start
    for _ in range(int(horizon)):
        state = step_primal(spec, game, state)
        traj.primal.append(state)
    return traj


# ------------------------------------------------------------- dual schemes

def _grad(reg: Regularizer, y):
    return y if reg.kind is RegKind.EUCLIDEAN else softmax(y)


def euler_arrays(game, regs, eta, X1, y1, X2, y2, y10, y20):
    """Raw Euler step on (possibly batched) arrays; returns (X1, y1, X2, y2)."""
    A = game.A
    r1, r2 = regs
    ny1 = y1 + eta * (_grad(r2, y20 - X1 @ A) @ A.T)
    nX1 = X1 + eta * _grad(r1, y1)
    ny2 = y2 - eta * (_grad(r1, y10 + X2 @ A.T) @ A)
    nX2 = X2 + eta * _grad(r2, y2)
    return nX1, ny1, nX2, ny2


def symplectic_arrays(game, regs, eta, X1, y1, X2, y2, y10, y20):
    """Raw symplectic step: Type I for player 1, Type II for player 2."""
    A = game.A
    r1, r2 = regs
    ny1 = y1 + eta * (_grad(r2, y20 - X1 @ A) @ A.T)
    nX1 = X1 + eta * _grad(r1, ny1)
    nX2 = X2 + eta * _grad(r2, y2)
    ny2 = y2 - eta * (_grad(r1, y10 + nX2 @ A.T) @ A)
    return nX1, ny1, nX2, ny2


def symplectic_inverse_arrays(game, regs, eta, X1, y1, X2, y2, y10, y20):
    """Algebraic inverse of :func:`symplectic_arrays` (solve X back, then y back)."""
    A = game.A
    r1, r2 = regs
    pX1 = X1 - eta * _grad(r1, y1)
    py1 = y1 - eta * (_grad(r2, y20 - pX1 @ A) @ A.T)
    py2 = y2 + eta * (_grad(r1, y10 + X2 @ A.T) @ A)
    pX2 = X2 - eta * _grad(r2, py2)
    return pX1, py1, pX2, py2


def _check_pair(game, state1, state2):
    if state1.player != 1 or state2.player != 2:
        raise ContractViolation("expected (player 1, player 2) states")
    if state1.t != state2.t:
        raise ContractViolation(f"states at different times: {state1.t} vs {state2.t}")
    if state1.dim != game.n1 or state2.dim != game.n2:
        raise ContractViolation("state dimensions do not match the game")


def _advance(fn, spec, game, regs, state1, state2, dt=1):
    _check_pair(game, state1, state2)
    regs = regs or spec.regularizers(game)
    X1, y1, X2, y2 = fn(game, regs, spec.eta, state1.X, state1.y, state2.X, state2.y,
                        state1.y0, state2.y0)
    t = state1.t + dt
    return DualState(1, X1, y1, state1.y0, t), DualState(2, X2, y2, state2.y0, t)


def step_dual_euler(spec: AlgorithmSpec, game: Game, regs, state1: DualState, state2: DualState):
    """Euler step of both players' Hamiltonian systems."""
    return _advance(euler_arrays, spec, game, regs, state1, state2)


def step_dual_symplectic(spec: AlgorithmSpec, game: Game, regs, state1: DualState, state2: DualState):
    """Symplectic step: Type I for player 1, Type II for player 2."""
    return _advance(symplectic_arrays, spec, game, regs, state1, state2)


def unstep_dual_symplectic(spec: AlgorithmSpec, game: Game, regs, state1: DualState, state2: DualState):
    return _advance(symplectic_inverse_arrays, spec, game, regs, state1, state2, dt=-1)


def step_dual(spec, game, regs, state1, state2):
    if spec.scheme is Scheme.SYMPLECTIC:
        return step_dual_symplectic(spec, game, regs, state1, state2)
    return step_dual_euler(spec, game, regs, state1, state2)


def dual_start(spec: AlgorithmSpec, game: Game, x1, x2) -> tuple[DualState, DualState]:
    """Dual initial condition (X = 0) whose extracted strategies start at ``(x1, x2)``.

    Euler: ``y_i(0) = grad h_i(x_i)``. Symplectic: player 1's first extracted
    strategy already reflects one payoff update, so ``y_1(0)`` is shifted back
    by ``eta A x2``.
    """
    r1, r2 = spec.regularizers(game)
    y20 = regularizer_gradient(r2, x2)
    y10 = regularizer_gradient(r1, x1)
    if spec.scheme is Scheme.SYMPLECTIC:
        y10 = y10 - spec.eta * (np.asarray(x2, dtype=float) @ game.A.T)
    if not (np.all(np.isfinite(y10)) and np.all(np.isfinite(y20))):
        raise DomainError("primal start lies on the simplex boundary")
    z1, z2 = np.zeros_like(y10), np.zeros_like(y20)
    return DualState(1, z1, y10, y10, 0), DualState(2, z2, y20, y20, 0)


def run_dual(spec: AlgorithmSpec, game: Game, state1: DualState, state2: DualState,
             horizon: int, regs=None) -> Trajectory:
    """Iterate the dual scheme matching ``spec``; the primal record is extracted
    as ``x^t = (X^{t+1} - X^t) / eta`` so it has one entry fewer than the dual."""
    regs = regs or spec.regularizers(game)
    traj = Trajectory(spec, [], {1: [state1], 2: [state2]}, horizon)
    s1, s2 = state1, state2
    for _ in range(int(horizon)):
        n1, n2 = step_dual(spec, game, regs, s1, s2)
        traj.primal.append(PrimalState((n1.X - s1.X) / spec.eta, (n2.X - s2.X) / spec.eta, s1.t))
        traj.dual[1].append(n1)
        traj.dual[2].append(n2)
        s1, s2 = n1, n2
    return traj


def check_primal_dual_equivalence(game: Game, spec: AlgorithmSpec, horizon: int,
                                  x1=None, x2=None) -> dict:
    """Largest sup-norm gap between primal iterates and strategies extracted from
    the matching dual scheme, over steps ``1..horizon``.

    Default start: uniform strategies under entropy, ``(1, 0, ...)`` vs ``(0, ..., 1)``
    under Euclidean.
    """
    if horizon < 0:
        raise ContractViolation("horizon must be >= 0")
    if x1 is None:
        x1 = np.full(game.n1, 1.0 / game.n1)
    if x2 is None:
        x2 = np.full(game.n2, 1.0 / game.n2)
    if horizon == 0:
        return {"max_deviation": 0.0, "horizon": 0}
    start = PrimalState(x1, x2, 0)
    primal = run_primal(spec, game, start, horizon)
    s1, s2 = dual_start(spec, game, x1, x2)
    dual = run_dual(spec, game, s1, s2, horizon + 1)
    dev = 0.0
    for t in range(1, horizon + 1):
        p, d = primal.primal[t], dual.primal[t]
        dev = max(dev, float(np.max(np.abs(p.x1 - d.x1))), float(np.max(np.abs(p.x2 - d.x2))))
    return {"max_deviation": dev, "horizon": horizon}


# --------------------------------------------------------- continuous flow

def hamiltonian_field(game, regs, X1, y1, X2, y2, y10, y20):
    """Time derivatives ``(dX1, dy1, dX2, dy2)`` of both players' Hamiltonian systems."""
    A = game.A
    r1, r2 = regs
    dX1 = _grad(r1, y1)
    dy1 = _grad(r2, y20 - X1 @ A) @ A.T
    dX2 = _grad(r2, y2)
    dy2 = -(_grad(r1, y10 + X2 @ A.T) @ A)
    return dX1, dy1, dX2, dy2


def rk4_arrays(game, regs, h, X1, y1, X2, y2, y10, y20):
    def f(s):
        return hamiltonian_field(game, regs, *s, y10, y20)

    s0 = (X1, y1, X2, y2)
    k1 = f(s0)
    k2 = f(tuple(a + 0.5 * h * k for a, k in zip(s0, k1)))
    k3 = f(tuple(a + 0.5 * h * k for a, k in zip(s0, k2)))
    k4 = f(tuple(a + h * k for a, k in zip(s0, k3)))
    return tuple(a + h / 6.0 * (p + 2 * q + 2 * r + s) for a, p, q, r, s in zip(s0, k1, k2, k3, k4))


def _affine_flow(game, player, y_other0, z0_y, z0_X, t):
    """Exact Euclidean flow of one player: augment (y; X; 1) to absorb the constant drive."""
    gen = build_generator(game, player)
    n = gen.n
    drive = game.payoff(player, 3 - player) @ y_other0
    aug = np.zeros((2 * n + 1, 2 * n + 1))
    aug[: 2 * n, : 2 * n] = gen.L
    aug[:n, -1] = drive
    z = np.concatenate([z0_y, z0_X, [1.0]])
    out = matrix_exponential(aug, t) @ z
    return out[:n], out[n: 2 * n]


def integrate_continuous(game: Game, regs, state1: DualState, state2: DualState,
                         t_final: float, dt: float, record_every: int = 1) -> Trajectory:
    """Continuous-time FTRL from ``(state1, state2)`` over ``[t0, t0 + t_final]``.

    Euclidean pairs use the exact matrix-exponential flow evaluated at every
    grid time; otherwise classical RK4 with step ``dt``. The grid is
    ``t_final / round(t_final / dt)`` so that ``t_final`` is hit exactly.
    """
    if not (t_final > 0 and dt > 0):
        raise ContractViolation("t_final and dt must be positive")
    _check_pair(game, state1, state2)
    regs = tuple(regs) if regs is not None else game.regularizers(RegKind.EUCLIDEAN)
    spec = AlgorithmSpec(Rule.CONTINUOUS, eta=dt, regularizer_kind=regs[0].kind)
    steps = max(1, int(round(t_final / dt)))
    h = t_final / steps
    t0 = state1.t
    traj = Trajectory(spec, [], {1: [], 2: []}, t_final)
    euclid = all(r.kind is RegKind.EUCLIDEAN for r in regs)
    y10, y20 = state1.y0, state2.y0

    def record(X1, y1, X2, y2, t):
        traj.dual[1].append(DualState(1, X1, y1, y10, t))
        traj.dual[2].append(DualState(2, X2, y2, y20, t))
        traj.primal.append(PrimalState(conjugate_gradient(regs[0], y1), conjugate_gradient(regs[1], y2), t))

    record(state1.X, state1.y, state2.X, state2.y, t0)
    if euclid:
        for k in range(record_every, steps + 1, record_every):
            tau = k * h
            y1, X1 = _affine_flow(game, 1, y20, state1.y, state1.X, tau)
            y2, X2 = _affine_flow(game, 2, y10, state2.y, state2.X, tau)
            record(X1, y1, X2, y2, t0 + tau)
        return traj

    s = (state1.X, state1.y, state2.X, state2.y)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(1, steps + 1):
            s = rk4_arrays(game, regs, h, *s, y10, y20)
            if not all(np.all(np.isfinite(a)) for a in s):
                raise IntegrationFailure("RK4 step produced non-finite values", t0 + k * h)
            if k % record_every == 0:
                record(*s, t0 + k * h)
    return traj


def warn_step_size(spec: AlgorithmSpec, game: Game) -> list[str]:
    msgs = spec.step_size_warnings(game)
    for m in msgs:
        warnings.warn(m, stacklevel=2)
    return msgs
