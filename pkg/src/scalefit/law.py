"""Five-parameter scaling-law evaluation and robust multi-start fitting.

The law, with every parameter living in log space:

    L_hat(N, D) = e^E + e^(A - alpha * ln N) + e^(B - beta * ln D)

Each power-law term is computed from the exponent difference, never as
e^A / N^alpha, so raw parameter counts around 1e11 stay inside float range.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from .errors import InsufficientDataError, ValidationError
from .records import ScaledFamily

PARAM_NAMES = ("E", "A", "alpha", "B", "beta")
FREEZABLE = ("A", "alpha")

DEFAULT_HUBER_DELTA = 1e-3
# Alternative reading of the published constant: e * 10^-3.
ALT_HUBER_DELTA = math.e * 1e-3

# Fitted exponents outside this range mark a degenerate (non-converged) fit.
EXPONENT_RANGE = (-5.0, 10.0)

_ALPHA_GRID = (0.2, 0.35, 0.5, 0.8)
_E_GRID = (math.log(1.5), math.log(2.5))


@dataclass(frozen=True)
class LawParams:
    """The 5-vector (E, A, alpha, B, beta); serialization order is fixed."""

    E: float
    A: float
    alpha: float
    B: float
    beta: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValidationError(f"law parameter {name} must be finite, got {value}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.E, self.A, self.alpha, self.B, self.beta], dtype=float)

    @classmethod
    def from_vector(cls, vec: Sequence[float]) -> "LawParams":
        if len(vec) != 5:
            raise ValidationError(f"expected a 5-vector, got length {len(vec)}")
        return cls(*(float(v) for v in vec))

    def to_dict(self) -> dict:
        return {name: float(getattr(self, name)) for name in PARAM_NAMES}

    @classmethod
    def from_dict(cls, data: Mapping[str, float]) -> "LawParams":
        missing = [n for n in PARAM_NAMES if n not in data]
        if missing:
            raise ValidationError(f"law params missing fields: {', '.join(missing)}")
        return cls(**{n: float(data[n]) for n in PARAM_NAMES})

    def replace(self, **changes) -> "LawParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class FitConfig:
    """Solver configuration.

    frozen maps a subset of {A, alpha} to fixed values; frozen parameters are
    returned unchanged and excluded from the search space. delta is the Huber
    transition point (quadratic below, linear above).
    """

    loss_kind: str = "square"
    delta: float = DEFAULT_HUBER_DELTA
    frozen: Mapping[str, float] | None = None
    restarts: int = 32
    max_iterations: int = 2000
    tolerance: float = 1e-10
    rng_seed: int = 0

    def __post_init__(self):
        if self.loss_kind not in ("square", "huber"):
            raise ValidationError(f"loss_kind must be 'square' or 'huber', got '{self.loss_kind}'")
        if not (self.delta > 0):
            raise ValidationError(f"delta must be positive, got {self.delta}")
        if self.restarts < 1:
            raise ValidationError(f"restarts must be >= 1, got {self.restarts}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not (self.tolerance > 0):
            raise ValidationError(f"tolerance must be positive, got {self.tolerance}")
        frozen = dict(self.frozen or {})
        bad = set(frozen) - set(FREEZABLE)
        if bad:
            raise ValidationError(f"only {FREEZABLE} may be frozen, got: {', '.join(sorted(bad))}")
        for name, value in frozen.items():
            if not math.isfinite(float(value)):
                raise ValidationError(f"frozen value for {name} must be finite, got {value}")
        object.__setattr__(self, "frozen", tuple(sorted((k, float(v)) for k, v in frozen.items())))

    @property
    def frozen_map(self) -> dict[str, float]:
        return dict(self.frozen or ())


@dataclass(frozen=True)
class FitResult:
    params: LawParams
    objective: float
    converged: bool
    restarts_tried: int
    n_points: int

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "objective": float(self.objective),
            "converged": bool(self.converged),
            "restarts_tried": int(self.restarts_tried),
            "n_points": int(self.n_points),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FitResult":
        return cls(
            params=LawParams.from_dict(data["params"]),
            objective=float(data["objective"]),
            converged=bool(data["converged"]),
            restarts_tried=int(data["restarts_tried"]),
            n_points=int(data["n_points"]),
        )


# ---------------------------------------------------------------------------
# Forward evaluation
# ---------------------------------------------------------------------------


def eval_law(params: LawParams, num_params: float, tokens: float) -> float:
    """Predicted loss at one (N, D) point; raises on overflow, never inf."""
    if num_params < 1 or tokens < 1:
        raise ValidationError(f"num_params and tokens must be >= 1, got ({num_params}, {tokens})")
    try:
        return (
            math.exp(params.E)
            + math.exp(params.A - params.alpha * math.log(num_params))
            + math.exp(params.B - params.beta * math.log(tokens))
        )
    except OverflowError:
        raise OverflowError(
            f"scaling-law evaluation overflows at N={num_params}, D={tokens} with {params.to_dict()}"
        ) from None


def _design(data: ScaledFamily) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if data.is_empty:
        raise InsufficientDataError(f"family '{data.family_id}' is empty")
    ln_n = np.array([math.log(r.num_params) for r in data.records])
    ln_d = np.array([math.log(r.tokens_seen) for r in data.records])
    loss = np.array([r.loss for r in data.records])
    return ln_n, ln_d, loss


def _predict_quiet(vec5: np.ndarray, ln_n: np.ndarray, ln_d: np.ndarray) -> np.ndarray:
    # Solver path: overflow becomes inf and the trust region rejects the step.
    E, A, a, B, b = vec5
    with np.errstate(over="ignore"):
        return np.exp(E) + np.exp(A - a * ln_n) + np.exp(B - b * ln_d)


def predict_records(params: LawParams, data: ScaledFamily) -> np.ndarray:
    """Predicted loss per record, in the family's canonical record order.

    Evaluated record by record so predictions are bit-identical to eval_law;
    data generated by the forward law scores residuals of exactly zero.
    """
    if data.is_empty:
        raise InsufficientDataError(f"family '{data.family_id}' is empty")
    return np.array([eval_law(params, r.num_params, r.tokens_seen) for r in data.records])


def residuals(params: LawParams, data: ScaledFamily) -> np.ndarray:
    """prediction - observation per record, in canonical record order."""
    pred = predict_records(params, data)
    return pred - np.array([r.loss for r in data.records])


def _jacobian_quiet(vec5: np.ndarray, ln_n: np.ndarray, ln_d: np.ndarray) -> np.ndarray:
    E, A, a, B, b = vec5
    with np.errstate(over="ignore"):
        t_n = np.exp(A - a * ln_n)
        t_d = np.exp(B - b * ln_d)
        col_e = np.full_like(ln_n, np.exp(E))
    jac = np.empty((ln_n.size, 5))
    jac[:, 0] = col_e
    jac[:, 1] = t_n
    jac[:, 2] = -ln_n * t_n
    jac[:, 3] = t_d
    jac[:, 4] = -ln_d * t_d
    return jac


def residual_jacobian(params: LawParams, data: ScaledFamily) -> np.ndarray:
    """d residual_i / d (E, A, alpha, B, beta): an (n_records, 5) matrix."""
    ln_n, ln_d, _ = _design(data)
    jac = _jacobian_quiet(params.as_vector(), ln_n, ln_d)
    if not np.all(np.isfinite(jac)):
        raise OverflowError(f"scaling-law Jacobian overflows with {params.to_dict()}")
    return jac


def huber(a, delta: float):
    """Piecewise penalty: a^2/2 inside |a| <= delta, linear outside."""
    if not (delta > 0):
        raise ValidationError(f"delta must be positive, got {delta}")
    arr = np.asarray(a, dtype=float)
    out = np.where(np.abs(arr) <= delta, 0.5 * arr * arr, delta * (np.abs(arr) - 0.5 * delta))
    return float(out) if out.ndim == 0 else out


def objective_value(residual_vec: np.ndarray, config: FitConfig) -> float:
    if config.loss_kind == "square":
        return float(np.sum(np.square(residual_vec)))
    return float(np.sum(huber(residual_vec, config.delta)))


def objective_gradient(params: LawParams, data: ScaledFamily, config: FitConfig) -> np.ndarray:
    """Analytic gradient of the fit objective w.r.t. the full 5-vector."""
    res = residuals(params, data)
    jac = residual_jacobian(params, data)
    if config.loss_kind == "square":
        weights = 2.0 * res
    else:
        delta = config.delta
        weights = np.where(np.abs(res) <= delta, res, delta * np.sign(res))
    return weights @ jac


# ---------------------------------------------------------------------------
# Multi-start fitting
# ---------------------------------------------------------------------------


def _check_preconditions(data: ScaledFamily, config: FitConfig) -> None:
    if data.is_empty:
        raise InsufficientDataError(f"fit: family '{data.family_id}' is empty")
    if len(data.corpora) > 1:
        raise ValidationError(
            f"fit: family '{data.family_id}' mixes corpora {data.corpora}; select one with select_corpus"
        )
    frozen = config.frozen_map
    if set(FREEZABLE) <= set(frozen):
        if len(data.records) < 2:
            raise InsufficientDataError(
                f"fit with frozen (A, alpha) needs >= 2 records, got {len(data.records)}"
            )
        return
    # Partial freezes keep the full-model requirement: the size term varies.
    if len(data.records) < 5 or data.num_runs < 3:
        raise InsufficientDataError(
            f"insufficient families: fit needs >= 5 records over >= 3 size families, "
            f"got {len(data.records)} records over {data.num_runs}"
        )


def _anchor_points(ln_n: np.ndarray, ln_d: np.ndarray, loss: np.ndarray):
    order = np.lexsort((ln_d, ln_n))
    lo, hi = order[0], order[-1]
    return (ln_n[lo], ln_d[lo], loss[lo]), (ln_n[hi], ln_d[hi], loss[hi])


def _solve_terms(E0: float, alpha: float, beta: float, anchors, frozen_a: float | None):
    """Pick A, B so the two anchor records are roughly reproduced at (E0, alpha, beta)."""
    (n1, d1, l1), (n2, d2, l2) = anchors
    e_term = math.exp(E0)
    c1 = max(l1 - e_term, 1e-4 * l1)
    c2 = max(l2 - e_term, 1e-4 * l2)
    if frozen_a is not None:
        # One unknown left: read B off the low anchor, where the token term dominates.
        spent = math.exp(frozen_a - alpha * n1)
        rest = max(c1 - spent, 1e-4 * c1)
        return frozen_a, math.log(rest) + beta * d1
    mat = np.array(
        [
            [math.exp(-alpha * n1), math.exp(-beta * d1)],
            [math.exp(-alpha * n2), math.exp(-beta * d2)],
        ]
    )
    rhs = np.array([c1, c2])
    try:
        sol = np.linalg.solve(mat, rhs)
    except np.linalg.LinAlgError:
        sol = None
    if sol is None or not np.all(np.isfinite(sol)) or sol[0] <= 0 or sol[1] <= 0:
        # Split each anchor's excess evenly between the two power-law terms.
        return math.log(0.5 * c1) + alpha * n1, math.log(0.5 * c2) + beta * d2
    return math.log(sol[0]), math.log(sol[1])


def _core_starts(anchors, frozen: dict[str, float]) -> list[np.ndarray]:
    alphas = (frozen["alpha"],) if "alpha" in frozen else _ALPHA_GRID
    frozen_a = frozen.get("A")
    starts = []
    for e0 in _E_GRID:
        for a0 in alphas:
            for b0 in _ALPHA_GRID:
                big_a, big_b = _solve_terms(e0, a0, b0, anchors, frozen_a)
                starts.append(np.array([e0, big_a, a0, big_b, b0]))
    return starts


def _jittered_start(base: np.ndarray, index: int, anchors, frozen: dict[str, float], rng_seed: int) -> np.ndarray:
    seed = np.random.SeedSequence([rng_seed & 0xFFFFFFFFFFFFFFFF, index])
    rng = np.random.default_rng(seed)
    e0 = base[0] + rng.normal(0.0, 0.5)
    if "alpha" in frozen:
        a0 = frozen["alpha"]
        rng.normal()  # keep the draw count fixed across freeze modes
    else:
        a0 = float(np.clip(base[2] * math.exp(rng.normal(0.0, 0.4)), 0.02, 3.0))
    b0 = float(np.clip(base[4] * math.exp(rng.normal(0.0, 0.4)), 0.02, 3.0))
    big_a, big_b = _solve_terms(e0, a0, b0, anchors, frozen.get("A"))
    return np.array([e0, big_a, a0, big_b, b0])


def _build_starts(data: ScaledFamily, config: FitConfig) -> list[np.ndarray]:
    """Deterministic start sequence; start i is the same for any restart budget.

    The first len(core) entries are the fixed grid (E outer, alpha middle,
    beta inner); later entries jitter the grid cyclically with an rng keyed
    by (rng_seed, index), so larger budgets strictly extend smaller ones.
    """
    ln_n, ln_d, loss = _design(data)
    anchors = _anchor_points(ln_n, ln_d, loss)
    frozen = config.frozen_map
    core = _core_starts(anchors, frozen)
    starts = []
    for i in range(config.restarts):
        if i < len(core):
            starts.append(core[i])
        else:
            starts.append(_jittered_start(core[i % len(core)], i, anchors, frozen, config.rng_seed))
    return starts


def fit(data: ScaledFamily, config: FitConfig | None = None) -> FitResult:
    """Best-of-restarts robust fit of the 5-parameter law.

    Returns the lowest-objective converged restart; ties break on lower
    alpha+beta, then start index. When nothing converges the best-effort
    parameters come back with converged=False; callers must check.
    """
    config = config or FitConfig()
    _check_preconditions(data, config)
    ln_n, ln_d, loss = _design(data)
    frozen = config.frozen_map
    free_idx = np.array([i for i, n in enumerate(PARAM_NAMES) if n not in frozen], dtype=int)
    frozen_idx = np.array([i for i, n in enumerate(PARAM_NAMES) if n in frozen], dtype=int)
    frozen_vals = np.array([frozen[PARAM_NAMES[i]] for i in frozen_idx], dtype=float)

    def unpack(x: np.ndarray) -> np.ndarray:
        vec = np.empty(5)
        vec[free_idx] = x
        if frozen_idx.size:
            vec[frozen_idx] = frozen_vals
        return vec

    def fun(x: np.ndarray) -> np.ndarray:
        return _predict_quiet(unpack(x), ln_n, ln_d) - loss

    def jac(x: np.ndarray) -> np.ndarray:
        return _jacobian_quiet(unpack(x), ln_n, ln_d)[:, free_idx]

    solver_kwargs: dict = {"method": "trf", "max_nfev": config.max_iterations}
    if config.loss_kind == "huber":
        solver_kwargs.update(loss="huber", f_scale=config.delta)

    alpha_checked = "alpha" not in frozen
    lo, hi = EXPONENT_RANGE
    best_key = None
    best: tuple[np.ndarray, float, bool] | None = None

    for index, start in enumerate(_build_starts(data, config)):
        x0 = start[free_idx]
        if not np.all(np.isfinite(fun(x0))):
            continue
        # Wild trial steps can overflow inside the solver's loss scaling; the
        # trust region rejects those steps, so the warning carries no signal.
        with np.errstate(over="ignore"):
            result = least_squares(
                fun, x0, jac=jac, ftol=config.tolerance, xtol=config.tolerance,
                gtol=config.tolerance, **solver_kwargs,
            )
        vec = unpack(result.x)
        res_vec = _predict_quiet(vec, ln_n, ln_d) - loss
        if not np.all(np.isfinite(res_vec)):
            continue
        objective = objective_value(res_vec, config)
        degenerate = (alpha_checked and not (lo <= vec[2] <= hi)) or not (lo <= vec[4] <= hi)
        converged = bool(result.status > 0) and not degenerate and math.isfinite(objective)
        # Converged results always outrank non-converged ones.
        key = (not converged, objective, vec[2] + vec[4], index)
        if best_key is None or key < best_key:
            best_key = key
            best = (vec, objective, converged)

    if best is None:
        raise InsufficientDataError(
            f"fit: no usable start for family '{data.family_id}' (all starts non-finite)"
        )
    vec, objective, converged = best
    return FitResult(
        params=LawParams.from_vector(vec),
        objective=objective,
        converged=converged,
        restarts_tried=config.restarts,
        n_points=len(data.records),
    )
