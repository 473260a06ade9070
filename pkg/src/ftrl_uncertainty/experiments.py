"""Config-driven experiment runner and the registry of named experiments.

A config is a single JSON document. Top-level keys:

``experiment``   registry name (see :data:`REGISTRY`) or absent for a single run
``game``         named matrix, inline list of rows, or
                 ``{"random": {"rows", "cols", "entry_range", "seed"}}``
``algorithm``    ``{"rule", "eta", "regularizer"}``
``init``         ``{"kind": "covariance", "P0"}``, ``{"kind": "gaussian", "mean", "cov",
                 "opponent_y0"}`` or ``{"kind": "patch", "center", "opponent_center", "side"}``
``horizon``      steps (discrete rules) or time units (continuous); default 1e4
``sample_every`` recording stride; default 10
``ensemble_n``   ensemble size for sampled inits; default 500
``seed``         base seed; default 0
``output_dir``   where files go; default ``$OUTPUT_DIR`` or ``./out``

For a named experiment the user keys override the preset in every sub-run.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linear as lin
from . import metrics as mt
from .dynamics import AlgorithmSpec, Rule, Scheme, check_primal_dual_equivalence
from .errors import ConfigError, ContractViolation
from .game import Game, RegKind
from .linear import GrowthClass, MapKind

DEFAULTS = {"eta": 0.05, "horizon": 10_000, "ensemble_n": 500, "sample_every": 10, "seed": 0}
DEFAULT_RULE = "AltGDA"
CHEBYSHEV_K = (2.0, 3.0, 5.0)
PATCH_CENTER = (0.03, 0.07, 0.9)

NAMED_GAMES = {
    "RPS": [[0, -1, 1], [1, 0, -1], [-1, 1, 0]],
    "A1": [[1, -1], [-1, 1]],
    "A2": [[1.2, -1.2], [-1, 1]],
    "A3": [[1.5, -1.5], [-1, 1]],
    "A4": [[1, -2], [-1, 1]],
    "A5": [[2, -3], [-1, 5]],
    "A6": [[2, -1.5], [-2, 3]],
    "B1": [[1, -1], [-1, 1]],
    "B2": [[1.2, -1.2], [-1, 1]],
    "B3": [[1, -1.3], [-1, 1.3]],
    "B4": [[1, -1.1], [-1, 1]],
    "B5": [[1, -1.2], [-1, 1]],
    "B6": [[1, -1.3], [-1, 1]],
    "C1": [[1, -1.31], [-1, 1.31]],
    "C2": [[2, -1.7], [-1.7, 1.5]],
}

# initial covariance of (y11, y12, X11, X12) used for the 2x2 experiments
P0_DEFAULT = np.array([[8, 2, 1, 3], [2, 13, 7, 9], [1, 7, 9, 2], [3, 9, 2, 10]], dtype=float)

TOP_KEYS = {"experiment", "game", "algorithm", "init", "horizon", "sample_every",
            "ensemble_n", "seed", "output_dir"}
ALG_KEYS = {"rule", "eta", "regularizer"}
INIT_KEYS = {
    "covariance": {"kind", "P0"},
    "gaussian": {"kind", "mean", "cov", "opponent_y0"},
    "patch": {"kind", "center", "opponent_center", "side"},
}
RANDOM_KEYS = {"rows", "cols", "entry_range", "seed"}


# ------------------------------------------------------------------ registry

@dataclass(frozen=True)
class Preset:
    description: str
    runs: tuple
    base: dict = field(default_factory=dict)


def _runs(games, **extra):
    return tuple(dict({"label": g, "game": g}, **extra) for g in games)


REGISTRY = {
    "figure1-dispersion": Preset(
        "RPS AltMWU ensemble of 400 starts in a 0.05-side simplex patch; dispersion of x11",
        ({"label": "RPS", "game": "RPS", "expect_dispersion_growth": 100.0},),
        {"algorithm": {"rule": "AltMWU"}, "init": {"kind": "patch", "side": 0.05},
         "horizon": 200, "ensemble_n": 400}),
    "continuous-singular": Preset(
        "Continuous Euclidean FTRL on singular A1-A3: Var(X) quadratic, Var(y) bounded",
        _runs(["A1", "A2", "A3"]), {"algorithm": {"rule": "ContinuousFTRL"}}),
    "continuous-nonsingular": Preset(
        "Continuous Euclidean FTRL on nonsingular A4-A6: both variances bounded",
        _runs(["A4", "A5", "A6"]), {"algorithm": {"rule": "ContinuousFTRL"}}),
    "symplectic": Preset(
        "Alternating GDA (symplectic) on B1-B6: singular quadratic, nonsingular bounded",
        _runs(["B1", "B2", "B3", "B4", "B5", "B6"]), {"algorithm": {"rule": "AltGDA"}}),
    "euler": Preset(
        "Simultaneous GDA (Euler) on C1, C2: exponential growth with base 1 + gamma eta^2",
        _runs(["C1", "C2"]), {"algorithm": {"rule": "GDA", "eta": 0.1}}),
    "entropy-gda-vs-altgda": Preset(
        "Differential entropy on A1: linear growth for GDA, flat for AltGDA",
        ({"label": "A1-GDA", "game": "A1", "algorithm": {"rule": "GDA"}},
         {"label": "A1-AltGDA", "game": "A1", "algorithm": {"rule": "AltGDA"}}), {}),
    "heisenberg-altmwu": Preset(
        "AltMWU ensemble of 500 on a random 3x3 game: Delta X11 and Delta y11 never both small",
        ({"label": "random3x3", "game": {"random": {"rows": 3, "cols": 3}}},),
        {"algorithm": {"rule": "AltMWU"}, "init": {"kind": "gaussian"}, "horizon": 2000,
         "sample_every": 1}),
    "chebyshev": Preset(
        "Chebyshev tail bounds for a 1000-sample AltGDA ensemble on A1",
        ({"label": "A1", "game": "A1"},),
        {"algorithm": {"rule": "AltGDA"}, "init": {"kind": "gaussian"}, "ensemble_n": 1000}),
}


def list_experiments() -> list[tuple[str, str]]:
    return [(name, p.description) for name, p in REGISTRY.items()]


def describe(name: str) -> str:
    if name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; valid: {', '.join(REGISTRY)}", "/experiment")
    p = REGISTRY[name]
    games = ", ".join(str(r["game"]) if isinstance(r["game"], str) else r["label"] for r in p.runs)
    lines = [f"{name}: {p.description}", f"games: {games}",
             "preset: " + json.dumps(p.base, sort_keys=True)]
    for r in p.runs:
        for g in ([r["game"]] if isinstance(r["game"], str) else []):
            lines.append(f"{g} = {json.dumps(NAMED_GAMES[g])}")
    return "\n".join(lines)


# -------------------------------------------------------------------- config

@dataclass
class RunConfig:
    label: str
    game_ref: object
    game: Game
    algorithm: AlgorithmSpec
    init: dict
    horizon: float
    sample_every: float
    ensemble_n: int
    seed: int
    expect: dict = field(default_factory=dict)

    def echo(self) -> dict:
        init = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in self.init.items()}
        return {
            "label": self.label,
            "game": self.game_ref,
            "A": self.game.A.tolist(),
            "algorithm": {"rule": self.algorithm.rule.value, "eta": self.algorithm.eta,
                          "regularizer": self.algorithm.regularizer_kind.value},
            "init": init,
            "horizon": self.horizon,
            "sample_every": self.sample_every,
            "ensemble_n": self.ensemble_n,
            "seed": self.seed,
        }


@dataclass
class ExperimentConfig:
    experiment: str | None
    runs: list
    output_dir: str

    def echo(self) -> dict:
        # the output location is left out so reports do not depend on where they are written
        return {"experiment": self.experiment, "runs": [r.echo() for r in self.runs]}


def _number(value, ptr, *, integer=False, positive=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number", ptr)
    if not np.isfinite(value):
        raise ConfigError("must be finite", ptr)
    if integer and float(value) != int(value):
        raise ConfigError("expected an integer", ptr)
    if positive and value <= 0:
        raise ConfigError("must be positive", ptr)
    return int(value) if integer else float(value)


def _matrix(value, ptr, shape=None):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("expected a numeric matrix", ptr) from None
    if M.ndim != 2 or M.size == 0:
        raise ConfigError(f"expected a non-empty 2-D matrix, got shape {M.shape}", ptr)
    if shape is not None and M.shape != shape:
        raise ConfigError(f"expected shape {shape}, got {M.shape}", ptr)
    if not np.all(np.isfinite(M)):
        raise ConfigError("matrix has non-finite entries", ptr)
    return M


def _vector(value, ptr, size):
    try:
        v = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("expected a numeric vector", ptr) from None
    if v.shape != (size,) or not np.all(np.isfinite(v)):
        raise ConfigError(f"expected a finite vector of length {size}", ptr)
    return v


def _psd(M, ptr):
    scale = max(1.0, float(np.max(np.abs(M))))
    if np.max(np.abs(M - M.T)) > 1e-12 * scale:
        raise ConfigError("matrix is not symmetric", ptr)
    if np.linalg.eigvalsh(M)[0] < -1e-10 * scale:
        raise ConfigError("matrix is not positive semi-definite", ptr)
    return M


def _check_keys(obj, allowed, ptr):
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", ptr)
    for k in sorted(obj):
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r}", f"{ptr}/{k}")


def resolve_game(ref, seed: int, ptr="/game") -> Game:
    if isinstance(ref, str):
        if ref not in NAMED_GAMES:
            raise ConfigError(f"unknown game {ref!r}; valid: {', '.join(NAMED_GAMES)}", ptr)
        return Game(NAMED_GAMES[ref])
    if isinstance(ref, dict):
        _check_keys(ref, {"random"}, ptr)
        spec = ref.get("random")
        _check_keys(spec, RANDOM_KEYS, ptr + "/random")
        rows = _number(spec.get("rows", 3), ptr + "/random/rows", integer=True, positive=True)
        cols = _number(spec.get("cols", rows), ptr + "/random/cols", integer=True, positive=True)
        lo, hi = spec.get("entry_range", [-1.0, 1.0]) if isinstance(spec.get("entry_range", []), list) else (None, None)
        if lo is None or not (_number(lo, ptr + "/random/entry_range/0") < _number(hi, ptr + "/random/entry_range/1")):
            raise ConfigError("entry_range must be [low, high] with low < high", ptr + "/random/entry_range")
        gseed = _number(spec.get("seed", seed), ptr + "/random/seed", integer=True)
        rng = mt.make_rng(gseed)
        return Game(rng.uniform(lo, hi, size=(rows, cols)))
    return Game(_matrix(ref, ptr))


def _resolve_init(raw, game: Game, alg: AlgorithmSpec, ptr="/init") -> dict:
    raw = dict(raw or {})
    entropy = alg.regularizer_kind is RegKind.ENTROPY
    kind = raw.get("kind", "gaussian" if entropy else "covariance")
    if kind not in INIT_KEYS:
        raise ConfigError(f"init kind must be one of {sorted(INIT_KEYS)}", ptr + "/kind")
    _check_keys(raw, INIT_KEYS[kind], ptr)
    d = 2 * game.n1
    default_cov = P0_DEFAULT if d == 4 and not entropy else (0.01 if entropy else 1.0) * np.eye(d)
    if kind == "covariance":
        if entropy:
            raise ConfigError("exact covariance propagation needs a Euclidean rule", ptr + "/kind")
        P0 = _psd(_matrix(raw.get("P0", default_cov), ptr + "/P0", (d, d)), ptr + "/P0")
        return {"kind": kind, "P0": P0}
    if kind == "gaussian":
        cov = _psd(_matrix(raw.get("cov", default_cov), ptr + "/cov", (d, d)), ptr + "/cov")
        mean = _vector(raw.get("mean", np.zeros(d)), ptr + "/mean", d)
        oy = _vector(raw.get("opponent_y0", np.zeros(game.n2)), ptr + "/opponent_y0", game.n2)
        return {"kind": kind, "mean": mean, "cov": cov, "opponent_y0": oy}
    if not entropy:
        raise ConfigError("simplex patches need an entropy-regularized rule", ptr + "/kind")
    default_center = PATCH_CENTER if game.n1 == 3 else np.full(game.n1, 1.0 / game.n1)
    center = _vector(raw.get("center", default_center), ptr + "/center", game.n1)
    oc_default = center if game.n2 == game.n1 else np.full(game.n2, 1.0 / game.n2)
    oc = _vector(raw.get("opponent_center", oc_default), ptr + "/opponent_center", game.n2)
    side = _number(raw.get("side", 0.05), ptr + "/side", positive=True)
    try:
        mt.UniformSimplexPatch(center, side, oc)
    except ContractViolation as exc:
        raise ConfigError(str(exc), ptr) from None
    return {"kind": kind, "center": center, "opponent_center": oc, "side": side}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k in ("algorithm", "init"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _build_run(doc: dict, label: str, expect: dict) -> RunConfig:
    seed = _number(doc.get("seed", DEFAULTS["seed"]), "/seed", integer=True)
    if seed < 0:
        raise ConfigError("seed must be non-negative", "/seed")
    game_ref = doc.get("game", "A1")
    game = resolve_game(game_ref, seed)
    alg_raw = doc.get("algorithm", {})
    _check_keys(alg_raw, ALG_KEYS, "/algorithm")
    rule = alg_raw.get("rule", DEFAULT_RULE)
    if rule not in {r.value for r in Rule}:
        raise ConfigError(f"unknown rule {rule!r}; valid: {', '.join(r.value for r in Rule)}", "/algorithm/rule")
    eta = _number(alg_raw.get("eta", DEFAULTS["eta"]), "/algorithm/eta")
    if eta <= 0:
        raise ConfigError("eta must be positive", "/algorithm/eta")
    reg = alg_raw.get("regularizer")
    if reg is not None and reg not in {k.value for k in RegKind}:
        raise ConfigError(f"unknown regularizer {reg!r}", "/algorithm/regularizer")
    try:
        alg = AlgorithmSpec(Rule(rule), eta, reg)
    except ContractViolation as exc:
        raise ConfigError(str(exc), "/algorithm") from None
    init = _resolve_init(doc.get("init"), game, alg)
    horizon = _number(doc.get("horizon", DEFAULTS["horizon"]), "/horizon", positive=True)
    every = _number(doc.get("sample_every", DEFAULTS["sample_every"]), "/sample_every", positive=True)
    if alg.rule is not Rule.CONTINUOUS:
        horizon = _number(horizon, "/horizon", integer=True)
        every = _number(every, "/sample_every", integer=True)
    n = _number(doc.get("ensemble_n", DEFAULTS["ensemble_n"]), "/ensemble_n", integer=True)
    if n < 2:
        raise ConfigError("ensemble_n must be at least 2", "/ensemble_n")
    if isinstance(game_ref, str):
        label = label or game_ref
    return RunConfig(label or "run", game_ref, game, alg, init, horizon, every, n, seed, expect)


def parse_config(source, *, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Validate a JSON config (path, JSON text, file object or dict) and apply defaults."""
    if isinstance(source, dict):
        doc = copy.deepcopy(source)
    else:
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, (str, Path)) and Path(source).is_file():
            text = Path(source).read_text(encoding="utf-8")
        else:
            text = str(source)
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc.msg} at line {exc.lineno}", "") from None
    _check_keys(doc, TOP_KEYS, "")
    if seed is not None:
        doc["seed"] = int(seed)
    out = output_dir or doc.pop("output_dir", None) or os.environ.get("OUTPUT_DIR") or "out"
    doc.pop("output_dir", None)
    name = doc.pop("experiment", None)
    if name is None:
        return ExperimentConfig(None, [_build_run(doc, "", {})], str(out))
    if not isinstance(name, str) or name not in REGISTRY:
        raise ConfigError(f"unknown experiment {name!r}; valid: {', '.join(REGISTRY)}", "/experiment")
    preset = REGISTRY[name]
    runs = []
    for r in preset.runs:
        r = dict(r)
        label = r.pop("label")
        expect = {k: r.pop(k) for k in list(r) if k.startswith("expect_")}
        merged = _merge(_merge(preset.base, r), doc)
        if "game" in doc:
            label = ""
        runs.append(_build_run(merged, label, expect))
    return ExperimentConfig(name, runs, str(out))


# ----------------------------------------------------------------- pipeline

@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    asserted: bool = True


@dataclass
class RunResult:
    config: RunConfig
    tables: dict = field(default_factory=dict)      # file stem -> (header, rows)
    verdicts: list = field(default_factory=list)    # (quantity, predicted, GrowthVerdict|None, note)
    checks: list = field(default_factory=list)
    notes: list = field(default_factory=list)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    runs: list
    manifest: dict = field(default_factory=dict)

    @property
    def checks(self) -> list:
        return [c for r in self.runs for c in r.checks]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)

    @property
    def exit_status(self) -> int:
        return 0 if self.passed else 1


def fmt(v) -> str:
    """Shortest round-trip decimal for floats."""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def series_columns(n: int) -> list[str]:
    cols = ["t"] + [f"var_y_{a}" for a in range(1, n + 1)] + [f"var_X_{a}" for a in range(1, n + 1)]
    cols += [f"cov_y{a}_X{b}" for a in range(1, n + 1) for b in range(1, n + 1)]
    cols.append("entropy_cum")
    for a in range(1, n + 1):
        cols += [f"heisenberg_product_{a}", f"block_det_{a}"]
    return cols


def series_rows(times, P, entropy_cum) -> list[list]:
    n = P.shape[-1] // 2
    rows = []
    with np.errstate(over="ignore", invalid="ignore"):
        rows = _rows(times, P, entropy_cum, n)
    return rows


def _rows(times, P, entropy_cum, n):
    rows = []
    for t, Q, h in zip(times, P, entropy_cum):
        d = np.diag(Q)
        row = [t] + list(d[:n]) + list(d[n:])
        row += [Q[a, n + b] for a in range(n) for b in range(n)]
        row.append(h)
        for a in range(n):
            row += [np.sqrt(max(d[a], 0.0) * max(d[n + a], 0.0)), d[a] * d[n + a] - Q[a, n + a] ** 2]
        rows.append(row)
    return rows


def _map_kind(alg: AlgorithmSpec) -> MapKind:
    if alg.rule is Rule.CONTINUOUS:
        return MapKind.CONTINUOUS
    return MapKind.SYMPLECTIC if alg.scheme is Scheme.SYMPLECTIC else MapKind.EULER


def _classify(res: RunResult, times, values, spectrum, kind, coordinate, eta, quantity):
    predicted, base = lin.theoretical_growth(kind, spectrum.singular, coordinate, spectrum.gamma, eta)
    try:
        v = lin.classify_growth(times, values, spectrum.gamma, eta, singular=spectrum.singular,
                                kind=kind, coordinate=coordinate)
    except ContractViolation as exc:
        res.verdicts.append((quantity, predicted, None, str(exc)))
        res.checks.append(Check(f"growth {quantity}", True, f"not classified: {exc}", asserted=False))
        return None
    note = "truncated at overflow" if v.truncated else ""
    res.verdicts.append((quantity, predicted, v, note))
    res.checks.append(Check(f"growth {quantity}", v.growth_class is predicted,
                            f"observed {v.growth_class.value}, predicted {predicted.value}"))
    if predicted is GrowthClass.EXPONENTIAL and v.growth_class is GrowthClass.EXPONENTIAL:
        # fitted base is per unit of t; t counts steps here
        err = abs(v.fitted_exponent_or_base - base) / base
        res.checks.append(Check(f"euler base {quantity}", err <= 0.05,
                                f"fitted {v.fitted_exponent_or_base:.6f} vs 1+gamma eta^2 = {base:.6f}"))
    return v


def _run_exact(res: RunResult, cfg: RunConfig, P0: np.ndarray):
    game, alg = cfg.game, cfg.algorithm
    kind = _map_kind(alg)
    spectrum = lin.gram_singularity(game)
    series = lin.covariance_series(game, kind, alg.eta, P0, cfg.horizon, cfg.sample_every)
    times = series.times
    if kind is MapKind.CONTINUOUS:
        delta = float(np.trace(lin.build_generator(game).L))
        cum = times * delta
    else:
        delta = mt.entropy_delta_linear(lin.build_map(game, kind, alg.eta))
        cum = times * delta
    res.tables["series"] = (series_columns(game.n1), series_rows(times, series.P, cum))
    if series.overflow:
        res.notes.append(f"covariance overflowed after t={fmt(times[-1])}; classification uses the finite prefix")
    for a in range(game.n1):
        for coord, vals in (("X", series.var_X(a)), ("y", series.var_y(a))):
            _classify(res, times, vals, spectrum, kind, coord, alg.eta, f"Var({coord}1,{a + 1})")

    # entropy checks against independent closed forms
    steps = float(times[-1])
    if kind is MapKind.SYMPLECTIC:
        res.checks.append(Check("entropy flat", abs(cum[-1]) <= 1e-10,
                                f"cumulative change {cum[-1]:.3e} over {fmt(steps)} steps"))
    elif kind is MapKind.EULER:
        sign, ld = np.linalg.slogdet(np.eye(game.n1) + alg.eta**2 * game.gram(1))
        expected = steps * ld
        rel = abs(cum[-1] - expected) / abs(expected) if expected else abs(cum[-1])
        res.checks.append(Check("entropy linear", rel <= 1e-9,
                                f"cumulative {cum[-1]:.12g} vs t ln det(I + eta^2 AA^T) = {expected:.12g}"))
    else:
        res.checks.append(Check("entropy flat", abs(delta) <= 1e-12, f"trace of generator {delta:.3e}"))

    width = mt.gromov_width_linear(P0)
    recs = mt.heisenberg_series(times, series.P, P0)
    margin = mt.heisenberg_margin(recs)
    res.checks.append(Check(
        "heisenberg block bound", margin >= -1e-8,
        f"min det block - (w_L/pi)^2 = {margin:.6g}, w_L = {width:.6g}",
        asserted=kind is not MapKind.EULER))
    return series


def _continuous_samples(ens: mt.Ensemble, times) -> np.ndarray:
    """Exact Euclidean flow of every ensemble member, ``(T, n, 2 dim)``."""
    game = ens.game
    gen = lin.build_generator(game)
    n = gen.n
    aug = np.zeros((2 * n + 1, 2 * n + 1))
    aug[: 2 * n, : 2 * n] = gen.L
    Z0 = np.hstack([ens.stacked(1), np.ones((len(ens), 1))])
    out = []
    for t in times:
        drive = game.payoff(1, 2) @ ens.y20[0]
        aug[:n, -1] = drive
        E = lin.matrix_exponential(aug, t)
        out.append((Z0 @ E.T)[:, : 2 * n])
    return np.array(out)


def _run_ensemble(res: RunResult, cfg: RunConfig, exact=None):
    game, alg, init = cfg.game, cfg.algorithm, cfg.init
    if init["kind"] == "gaussian":
        dist = mt.GaussianDual(init["mean"], init["cov"], init["opponent_y0"])
    else:
        dist = mt.UniformSimplexPatch(init["center"], init["side"], init["opponent_center"])
    ens = mt.sample_ensemble(dist, cfg.ensemble_n, cfg.seed, game, alg)
    n = game.n1
    if alg.rule is Rule.CONTINUOUS:
        if alg.regularizer_kind is not RegKind.EUCLIDEAN:
            raise ContractViolation("continuous ensembles are supported for the Euclidean regularizer only")
        count = int(np.floor(cfg.horizon / cfg.sample_every + 1e-9))
        times = np.arange(count + 1) * float(cfg.sample_every)
        samples = _continuous_samples(ens, times)
        cum = np.zeros(len(times))
    else:
        euler_entropy = alg.scheme is Scheme.EULER and alg.regularizer_kind is RegKind.ENTROPY
        regs = alg.regularizers(game)
        times, raw, cum, incs, mins = [], [], [], [], []
        total = 0.0
        for step in range(int(cfg.horizon) + 1):
            if step % cfg.sample_every == 0:
                times.append(step)
                raw.append(ens.stacked(1).copy())
                cum.append(total)
            if step == cfg.horizon:
                break
            if euler_entropy:
                dets = mt.euler_jacobian_dets(game, regs, alg.eta, ens.X1, ens.y1, ens.y20)
                incs.append(float(np.mean(np.log(dets))))
                mins.append(float(np.min(dets)))
                total += incs[-1]
            ens = ens.step()
        times = np.array(times, dtype=float)
        samples = np.array(raw)
        cum = np.array(cum)
        if euler_entropy:
            res.checks.append(Check("mwu entropy increment positive", min(incs) > 0,
                                    f"smallest mean increment {min(incs):.6g}"))
            res.checks.append(Check("mwu det J >= 1", min(mins) >= 1 - 1e-8,
                                    f"smallest sample det {min(mins):.15g}"))
        elif alg.regularizer_kind is not RegKind.ENTROPY and alg.scheme is Scheme.EULER:
            cum = times * mt.entropy_delta_linear(lin.build_map(game, MapKind.EULER, alg.eta))
    P = np.array([mt.covariance_of(Z) for Z in samples])
    res.tables["ensemble"] = (series_columns(n), series_rows(times, P, cum))

    linear_rule = alg.regularizer_kind is RegKind.EUCLIDEAN
    if exact is not None and len(exact.times) == len(times):
        se = mt.jackknife_covariance_se(samples[-1])
        diff = np.abs(P[-1] - exact.P[-1])
        z = float(np.max(np.where(se > 0, diff / np.where(se > 0, se, 1), 0)))
        res.checks.append(Check("ensemble vs exact covariance", z <= 3.0,
                                f"max |sample - exact| / jackknife SE = {z:.3f} at t={fmt(times[-1])}",
                                asserted=False))

    # Chebyshev tail frequencies for the first coordinate pair
    if cfg.ensemble_n >= 100 and len(times) > 1:
        rows = []
        ok = True
        for k in CHEBYSHEV_K:
            rep = mt.chebyshev_check(times, samples[:, :, n], samples[:, :, 0], k)
            ok = ok and rep.passed
            rows.append([k, rep.c_X, rep.c_y, rep.max_fraction_X, rep.bound_X, rep.max_fraction_y, rep.bound_y])
        res.tables["chebyshev"] = (["k", "c_X", "c_y", "max_fraction_X", "bound_X",
                                    "max_fraction_y", "bound_y"], rows)
        res.checks.append(Check("chebyshev k=2,3,5", ok, "violation frequencies within c-calibrated bounds",
                                asserted=linear_rule))

    # Heisenberg product bound from the sampled initial covariance
    recs = mt.heisenberg_series(times, P)
    prod_margin = float(min(np.min(r.product) - r.bound_product for r in recs))
    block_margin = mt.heisenberg_margin(recs)
    # a patch start has X = 0 exactly, so positivity is checked for t > 0
    min_product = float(min(np.min(r.product) for r in recs if r.t > 0))
    res.checks.append(Check("Delta X Delta y positive", min_product > 0,
                            f"min over t > 0 and coordinates of Delta X Delta y = {min_product:.6g}"))
    # the product bound is only proven for small, linearized deviations
    res.checks.append(Check("heisenberg product bound", prod_margin >= 0,
                            f"min Delta X Delta y - w_L/(sqrt2 pi) = {prod_margin:.6g}", asserted=False))
    res.checks.append(Check("heisenberg block bound (sampled)", block_margin >= 0,
                            f"min det block - (w_L/pi)^2 = {block_margin:.6g}", asserted=False))
    sdX = np.sqrt(P[:, n, n])
    sdy = np.sqrt(P[:, 0, 0])
    diag = mt.extrema_alignment(sdX, sdy)
    res.notes.append("Delta X11 / Delta y11 oscillation: " + ", ".join(
        f"{k}={fmt(v)}" for k, v in diag.items()))
    return times, samples


def _run_dispersion(res: RunResult, cfg: RunConfig):
    init = cfg.init
    patch = mt.UniformSimplexPatch(init["center"], init["side"], init["opponent_center"])
    every = int(cfg.sample_every)
    times = list(range(0, int(cfg.horizon) + 1, every))
    if times[-1] != int(cfg.horizon):
        times.append(int(cfg.horizon))
    snaps = mt.figure1_dispersion(cfg.game, patch, times, cfg.algorithm.eta, cfg.ensemble_n,
                                  cfg.seed, cfg.algorithm.rule)
    n1 = cfg.game.n1
    res.tables["dispersion"] = (
        ["t"] + [f"mean_x1_{a}" for a in range(1, n1 + 1)] + ["var_x1_1"],
        [[s.t] + list(s.mean) + [s.var_first] for s in snaps])
    res.tables["points"] = (
        ["t", "sample"] + [f"x1_{a}" for a in range(1, n1 + 1)],
        [[s.t, i] + list(p) for s in snaps for i, p in enumerate(s.points)])
    if not snaps[0].plottable:
        res.notes.append("player 1 does not have 3 actions; points are not plottable on a triangle")
    oracle = init["side"] ** 2 / 12.0
    v0 = snaps[0].var_first
    res.checks.append(Check("initial dispersion", abs(v0 - oracle) <= 0.2 * oracle,
                            f"Var(x11) at t=0 = {v0:.6g}, uniform-square value side^2/12 = {oracle:.6g}"))
    ratio = snaps[-1].var_first / v0
    target = cfg.expect.get("expect_dispersion_growth")
    res.checks.append(Check("dispersion growth", target is None or ratio >= target,
                            f"Var(x11) grew {ratio:.1f}x by t={snaps[-1].t}", asserted=target is not None))


def run_single(cfg: RunConfig) -> RunResult:
    res = RunResult(cfg)
    alg = cfg.algorithm
    for w in alg.step_size_warnings(cfg.game):
        res.notes.append("warning: " + w)
    exact = None
    stage = "setup"
    try:
        if alg.regularizer_kind is RegKind.EUCLIDEAN:
            stage = "exact covariance"
            P0 = cfg.init["P0"] if cfg.init["kind"] == "covariance" else cfg.init["cov"]
            exact = _run_exact(res, cfg, P0)
        if cfg.init["kind"] != "covariance":
            stage = "ensemble"
            _run_ensemble(res, cfg, exact)
        if cfg.init["kind"] == "patch":
            stage = "dispersion"
            _run_dispersion(res, cfg)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        raise type(exc)(f"[{cfg.label}: {stage}] {exc}") from exc
    return res


# ------------------------------------------------------------------ emission

def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_bytes(header, rows) -> bytes:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return ("\n".join(lines) + "\n").encode("utf-8")


def _markdown(report: ExperimentReport) -> str:
    cfg = report.config
    out = [f"# Experiment: {cfg.experiment or 'inline'}", "",
           f"Overall: {'PASS' if report.passed else 'FAIL'}", "",
           "## Resolved configuration", "", "```json",
           json.dumps(cfg.echo(), indent=2, sort_keys=True), "```", ""]
    for r in report.runs:
        c = r.config
        out += [f"## {c.label}", "",
                f"rule {c.algorithm.rule.value}, eta {fmt(c.algorithm.eta)}, horizon {fmt(c.horizon)}, "
                f"init {c.init['kind']}", ""]
        if r.verdicts:
            spectrum = lin.gram_singularity(c.game)
            out += [f"Gram spectrum: gamma = {spectrum.gamma:.6g}, "
                    f"min eigenvalue = {spectrum.min_eig:.3e}, singular = {spectrum.singular}", "",
                    "| quantity | predicted | observed | fitted | loglog slope | tail ratio | note |",
                    "|---|---|---|---|---|---|---|"]
            for q, pred, v, note in r.verdicts:
                if v is None:
                    out.append(f"| {q} | {pred.value} | n/a | | | | {note} |")
                else:
                    out.append(f"| {q} | {pred.value} | {v.growth_class.value} | "
                               f"{v.fitted_exponent_or_base:.6g} | {v.loglog_slope:.4g} | "
                               f"{v.tail_ratio:.4g} | {note} |")
            out.append("")
        out += ["| check | result | detail |", "|---|---|---|"]
        for ch in r.checks:
            tag = ("PASS" if ch.passed else "FAIL") + ("" if ch.asserted else " (report only)")
            out.append(f"| {ch.name} | {tag} | {ch.detail} |")
        out.append("")
        for note in r.notes:
            out.append(f"- {note}")
        if r.notes:
            out.append("")
    return "\n".join(out)


def _manifest_bytes(manifest: dict) -> bytes:
    return (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8")


def emit(report: ExperimentReport, out_dir) -> dict:
    """Write CSVs, the Markdown report and ``manifest.json``; returns the manifest."""
    out_dir = Path(out_dir)
    files = {}
    for r in report.runs:
        for stem, (header, rows) in r.tables.items():
            name = f"{r.config.label}_{stem}.csv"
            files[name] = csv_bytes(header, rows)
    files["report.md"] = _markdown(report).encode("utf-8")
    for name, data in files.items():
        _atomic_write(out_dir / name, data)
    manifest = {
        "experiment": report.config.experiment or "inline",
        "passed": report.passed,
        "files": {name: {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
                  for name, data in sorted(files.items())},
    }
    _atomic_write(out_dir / "manifest.json", _manifest_bytes(manifest))
    report.manifest = manifest
    return manifest


def run_experiment(config: ExperimentConfig, out_dir=None, write: bool = True) -> ExperimentReport:
    report = ExperimentReport(config, [run_single(r) for r in config.runs])
    if write:
        emit(report, out_dir or config.output_dir)
    return report


def run_verify(out_dir, seed: int = 0) -> tuple[bool, dict, list]:
    """Run every registered experiment plus the primal/dual equivalence check.

    Each experiment writes into ``out_dir/<name>``; a top-level manifest
    collects all file hashes. Returns ``(passed, manifest, lines)``.
    """
    out_dir = Path(out_dir)
    lines = []
    entries = {}
    ok = True
    rps = Game(NAMED_GAMES["RPS"])
    x1, x2 = np.array([0.5, 0.3, 0.2]), np.array([0.2, 0.5, 0.3])
    for rule in (Rule.MWU, Rule.ALT_MWU, Rule.GDA, Rule.ALT_GDA):
        dev = check_primal_dual_equivalence(rps, AlgorithmSpec(rule, 0.05), 1000, x1, x2)["max_deviation"]
        good = dev < 1e-9
        ok = ok and good
        lines.append(f"{'PASS' if good else 'FAIL'} equivalence {rule.value}: max deviation {dev:.3e}")
    for name in REGISTRY:
        cfg = parse_config({"experiment": name}, seed=seed, output_dir=str(out_dir / name))
        report = run_experiment(cfg)
        ok = ok and report.passed
        lines.append(f"{'PASS' if report.passed else 'FAIL'} {name}")
        for ch in report.checks:
            if ch.asserted and not ch.passed:
                lines.append(f"    failed: {ch.name}: {ch.detail}")
        for fname, meta in report.manifest["files"].items():
            entries[f"{name}/{fname}"] = meta
    manifest = {"seed": seed, "passed": ok, "files": entries}
    _atomic_write(out_dir / "manifest.json", _manifest_bytes(manifest))
    return ok, manifest, lines
