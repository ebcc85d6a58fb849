"""Meta-experiments over scaled families.

Configuration grids with iso-FLOP contours and efficiency stars,
leave-one-size-family-out cross-validation, and PCA over fitted 5-vectors.
Failed grid cells are recorded with a failure marker, never dropped.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError, ValidationError
from .law import PARAM_NAMES, FitConfig, FitResult, LawParams, fit
from .metrics import are
from .records import ScaledFamily
from .subsets import (
    DEFAULT_TARGET_FRACTION,
    MIN_TRAIN_RUNS,
    SubsetSpec,
    build_target,
    build_train,
    max_token_family,
)

FLOPS_PER_PARAM_TOKEN = 6
DEFAULT_STAR_THRESHOLDS = (0.15, 0.10, 0.05)

GRID_CONSTRUCTION = (
    "train = k smallest size families below the maximal-parameter family, "
    "token-prefix filtered; target = fixed tail of the maximal-parameter family"
)


def train_flops(family: ScaledFamily) -> float:
    """Total training compute to produce a train set: per run, 6 * N * max tokens kept.

    An ingested flops value on a run's last kept checkpoint overrides the
    6ND approximation for that run. Integer-only inputs stay exact.
    """
    total: float | int = 0
    for recs in family.size_families.values():
        last = max(recs, key=lambda r: r.tokens_seen)
        if last.flops is not None:
            total += last.flops
        else:
            total += FLOPS_PER_PARAM_TOKEN * last.num_params * last.tokens_seen
    return total


@dataclass(frozen=True)
class GridCell:
    """One meta-experiment configuration and its outcome.

    are is present iff the fit converged; failure explains white cells.
    """

    spec: SubsetSpec
    scale_up: float | None
    train_flops: float
    fit: FitResult | None
    are: float | None
    failure: str | None = None

    @property
    def num_models(self) -> int | None:
        return self.spec.num_models

    @property
    def train_fraction(self) -> float:
        return self.spec.train_fraction_max if self.spec.train_fraction_max is not None else 1.0

    @property
    def converged(self) -> bool:
        return self.fit is not None and self.fit.converged


@dataclass(frozen=True)
class GridReport:
    family_id: str
    num_models_axis: tuple[int, ...]
    train_fraction_axis: tuple[float, ...]
    target_fraction: float
    cells: tuple[GridCell, ...]
    construction: str = GRID_CONSTRUCTION

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["num_models", "train_fraction", "scale_up", "are", "train_flops", "converged", "failure"]
            + list(PARAM_NAMES)
            + ["objective"]
        )
        for cell in self.cells:
            params = cell.fit.params.to_dict() if cell.fit else {}
            writer.writerow(
                [
                    cell.num_models,
                    repr(cell.train_fraction),
                    "" if cell.scale_up is None else repr(cell.scale_up),
                    "" if cell.are is None else repr(cell.are),
                    repr(float(cell.train_flops)),
                    int(cell.converged),
                    cell.failure or "",
                ]
                + ["" if not params else repr(params[name]) for name in PARAM_NAMES]
                + ["" if cell.fit is None else repr(cell.fit.objective)]
            )
        return out.getvalue()


def _grid_cell(
    family: ScaledFamily,
    spec: SubsetSpec,
    config: FitConfig,
    target: ScaledFamily,
    target_max_params: int,
) -> GridCell:
    train = build_train(family, spec)
    flops = train_flops(train)
    if train.is_empty:
        return GridCell(spec=spec, scale_up=None, train_flops=flops, fit=None, are=None,
                        failure="insufficient families")
    scale_up = target_max_params / max(r.num_params for r in train.records)
    if train.num_runs < MIN_TRAIN_RUNS:
        return GridCell(spec=spec, scale_up=scale_up, train_flops=flops, fit=None, are=None,
                        failure="insufficient families")
    result = fit(train, config)
    if not result.converged:
        return GridCell(spec=spec, scale_up=scale_up, train_flops=flops, fit=result, are=None,
                        failure="non-convergence")
    try:
        report = are(result.params, target)
    except OverflowError:
        return GridCell(spec=spec, scale_up=scale_up, train_flops=flops, fit=result, are=None,
                        failure="prediction overflow")
    return GridCell(spec=spec, scale_up=scale_up, train_flops=flops, fit=result, are=report.are)


def run_grid(
    family: ScaledFamily,
    num_models: Sequence[int],
    train_fractions: Sequence[float],
    config: FitConfig | None = None,
    target_fraction: float = DEFAULT_TARGET_FRACTION,
) -> GridReport:
    """One cell per (num_models, train_fraction) combination, axes sorted ascending.

    Every cell reuses the same FitConfig (common multi-start schedule), so
    cross-cell ARE comparisons are not confounded by solver luck.
    """
    config = config or FitConfig()
    if not num_models or not train_fractions:
        raise ValidationError("run_grid: both axes must be non-empty")
    ks = tuple(sorted(set(int(k) for k in num_models)))
    qs = tuple(sorted(set(float(q) for q in train_fractions)))
    target = build_target(family, target_fraction)
    target_max_params = max(r.num_params for r in target.records)
    cells = []
    for k in ks:
        for q in qs:
            spec = SubsetSpec(num_models=k, train_fraction_max=q)
            cells.append(_grid_cell(family, spec, config, target, target_max_params))
    if all(cell.fit is None for cell in cells):
        raise InsufficientDataError(
            f"run_grid: no feasible cell for family '{family.family_id}' "
            f"(every configuration lacks {MIN_TRAIN_RUNS} train size families)"
        )
    return GridReport(
        family_id=family.family_id,
        num_models_axis=ks,
        train_fraction_axis=qs,
        target_fraction=target_fraction,
        cells=tuple(cells),
    )


# ---------------------------------------------------------------------------
# Iso-FLOP contours (marching squares with bilinear interpolation)
# ---------------------------------------------------------------------------

Point = tuple[float, float]


@dataclass(frozen=True)
class ContourLine:
    level: float
    polylines: tuple[tuple[Point, ...], ...]

    def to_dict(self) -> dict:
        return {
            "level": float(self.level),
            "polylines": [[[float(x), float(y)] for (x, y) in line] for line in self.polylines],
        }


def _grid_values(cells: Sequence[GridCell]):
    xs = sorted({c.num_models for c in cells})
    ys = sorted({c.train_fraction for c in cells})
    if any(x is None for x in xs):
        raise ValidationError("iso_flop_contours: every cell needs a num_models value")
    index = {}
    for cell in cells:
        key = (cell.num_models, cell.train_fraction)
        if key in index:
            raise ValidationError(f"iso_flop_contours: duplicate cell at {key}")
        index[key] = cell.train_flops
    values = np.empty((len(xs), len(ys)))
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            if (x, y) not in index:
                raise ValidationError(f"iso_flop_contours: grid is missing cell ({x}, {y})")
            values[i, j] = index[(x, y)]
    return np.array(xs, dtype=float), np.array(ys, dtype=float), values


def _edge_point(pa: Point, va: float, pb: Point, vb: float, level: float) -> Point:
    t = (level - va) / (vb - va)
    return (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))


def _square_segments(corners, values, level: float):
    # corners/values ordered: 00, 10, 11, 01 (counter-clockwise)
    high = [v >= level for v in values]
    edges = ((0, 1), (1, 2), (2, 3), (3, 0))
    crossings = {}
    for e, (a, b) in enumerate(edges):
        if high[a] != high[b]:
            crossings[e] = _edge_point(corners[a], values[a], corners[b], values[b], level)
    if len(crossings) == 2:
        pts = [crossings[e] for e in sorted(crossings)]
        return [(pts[0], pts[1])]
    if len(crossings) == 4:
        center_high = (sum(values) / 4.0) >= level
        if center_high == high[0]:
            pairs = ((0, 1), (2, 3))
        else:
            pairs = ((0, 3), (1, 2))
        return [(crossings[a], crossings[b]) for a, b in pairs]
    return []


def _chain_segments(segments: list[tuple[Point, Point]]) -> tuple[tuple[Point, ...], ...]:
    def key(p: Point):
        return (round(p[0], 9), round(p[1], 9))

    adjacency: dict[tuple, list[int]] = {}
    for i, (a, b) in enumerate(segments):
        adjacency.setdefault(key(a), []).append(i)
        adjacency.setdefault(key(b), []).append(i)
    used = [False] * len(segments)

    def walk(start):
        line = [start]
        current = start
        while True:
            next_id = next((i for i in sorted(adjacency.get(current, ())) if not used[i]), None)
            if next_id is None:
                return line
            used[next_id] = True
            a, b = segments[next_id]
            current = key(b) if key(a) == current else key(a)
            line.append(current)

    polylines = []
    for start in sorted(k for k, ids in adjacency.items() if len(ids) % 2 == 1):
        if any(not used[i] for i in adjacency[start]):
            polylines.append(walk(start))
    for i, (a, _) in enumerate(segments):
        if not used[i]:
            polylines.append(walk(key(a)))
    return tuple(tuple(line) for line in polylines if len(line) >= 2)


def iso_flop_contours(cells: Sequence[GridCell], levels: Sequence[float]) -> list[ContourLine]:
    """Equal-compute polylines in (num_models, train_fraction) axis units.

    A level outside the grid's FLOP range yields an empty entry; a constant
    field equal to the level yields the grid's boundary rectangle.
    """
    if not cells:
        raise ValidationError("iso_flop_contours: no cells")
    xs, ys, values = _grid_values(cells)
    out = []
    for level in levels:
        if not (level > 0):
            raise ValidationError(f"iso_flop_contours: levels must be positive, got {level}")
        if np.all(values == level):
            box = (
                (xs[0], ys[0]), (xs[-1], ys[0]), (xs[-1], ys[-1]), (xs[0], ys[-1]), (xs[0], ys[0]),
            )
            out.append(ContourLine(level=level, polylines=(box,)))
            continue
        segments: list[tuple[Point, Point]] = []
        for i in range(len(xs) - 1):
            for j in range(len(ys) - 1):
                corners = (
                    (xs[i], ys[j]), (xs[i + 1], ys[j]), (xs[i + 1], ys[j + 1]), (xs[i], ys[j + 1]),
                )
                vals = (values[i, j], values[i + 1, j], values[i + 1, j + 1], values[i, j + 1])
                segments.extend(_square_segments(corners, vals, level))
        out.append(ContourLine(level=level, polylines=_chain_segments(segments)))
    return out


def efficiency_stars(
    cells: Sequence[GridCell],
    thresholds: Sequence[float] = DEFAULT_STAR_THRESHOLDS,
) -> dict[float, GridCell | None]:
    """Per threshold, the cheapest converged cell with ARE at or under it.

    Ties prefer lower ARE, then fewer models. None when nothing qualifies.
    """
    stars: dict[float, GridCell | None] = {}
    for threshold in thresholds:
        qualifying = [c for c in cells if c.converged and c.are is not None and c.are <= threshold]
        if not qualifying:
            stars[threshold] = None
            continue
        stars[threshold] = min(
            qualifying,
            key=lambda c: (
                c.train_flops,
                c.are,
                c.num_models if c.num_models is not None else 2**63,
                c.train_fraction,
            ),
        )
    return stars


# ---------------------------------------------------------------------------
# Leave-one-size-family-out cross-validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CvRow:
    model_id: str
    seed: int
    num_params: int
    are: float | None
    converged: bool
    failure: str | None

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "seed": self.seed,
            "num_params": self.num_params,
            "are": self.are,
            "converged": self.converged,
            "failure": self.failure,
        }


@dataclass(frozen=True)
class CvReport:
    family_id: str
    rows: tuple[CvRow, ...]

    def to_dict(self) -> dict:
        return {"family_id": self.family_id, "rows": [r.to_dict() for r in self.rows]}

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["model_id", "seed", "num_params", "are", "converged", "failure"])
        for row in self.rows:
            writer.writerow(
                [row.model_id, row.seed, row.num_params,
                 "" if row.are is None else repr(row.are), int(row.converged), row.failure or ""]
            )
        return out.getvalue()


def loo_family_cv(
    family: ScaledFamily,
    config: FitConfig | None = None,
    target_fraction: float = DEFAULT_TARGET_FRACTION,
) -> CvReport:
    """Hold out each size family in turn, fit on the rest, score the held-out tail.

    The true maximal-parameter family is always excluded from training so
    every row's fit extrapolates upward. Per-row failures are recorded
    rather than aborting the sweep.
    """
    config = config or FitConfig()
    runs = family.size_families
    if len(runs) < 4:
        raise InsufficientDataError(
            f"loo_family_cv: family '{family.family_id}' has {len(runs)} size families, need >= 4"
        )
    top = max(r.num_params for r in family.records)
    rows = []
    for run_key, recs in runs.items():
        held = family.with_records(recs)
        target = max_token_family(held, target_fraction)
        train = family.with_records(
            r for r in family.records if r.run_key != run_key and r.num_params != top
        )
        num_params = max(r.num_params for r in recs)
        if train.num_runs < MIN_TRAIN_RUNS:
            rows.append(CvRow(run_key[0], run_key[1], num_params, None, False, "insufficient families"))
            continue
        result = fit(train, config)
        if not result.converged:
            rows.append(CvRow(run_key[0], run_key[1], num_params, None, False, "non-convergence"))
            continue
        try:
            report = are(result.params, target)
        except OverflowError:
            rows.append(CvRow(run_key[0], run_key[1], num_params, None, True, "prediction overflow"))
            continue
        rows.append(CvRow(run_key[0], run_key[1], num_params, report.are, True, None))
    return CvReport(family_id=family.family_id, rows=tuple(rows))


# ---------------------------------------------------------------------------
# PCA over fitted parameter vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaReport:
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray
    scatter_a_alpha: tuple[tuple[float, float], ...]
    scatter_b_beta: tuple[tuple[float, float], ...]
    standardize: bool
    scales: np.ndarray
    labels: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "components": [[float(v) for v in row] for row in self.components],
            "explained_variance_ratio": [float(v) for v in self.explained_variance_ratio],
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "standardize": self.standardize,
            "scales": [float(v) for v in self.scales],
            "labels": list(self.labels),
            "scatter_a_alpha": [[float(a), float(b)] for a, b in self.scatter_a_alpha],
            "scatter_b_beta": [[float(a), float(b)] for a, b in self.scatter_b_beta],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(
            ["label"] + list(PARAM_NAMES) + [f"score_{i + 1}" for i in range(self.components.shape[0])]
        )
        raw = self.scores @ self.components * self.scales + self.mean
        for label, params, scores in zip(self.labels, raw, self.scores):
            writer.writerow([label] + [repr(float(v)) for v in params] + [repr(float(s)) for s in scores])
        return out.getvalue()


def pca_params(
    fits: Sequence[LawParams],
    standardize: bool = True,
    labels: Sequence[str] | None = None,
) -> PcaReport:
    """Eigendecomposition of the covariance (or correlation) of fitted 5-vectors.

    Components come back as orthonormal rows in descending variance order;
    ratios sum to 1 except for an all-identical cloud, where they are all 0.
    """
    if len(fits) < 2:
        raise InsufficientDataError(f"pca_params needs >= 2 fits, got {len(fits)}")
    if labels is None:
        labels = tuple(f"fit-{i}" for i in range(len(fits)))
    elif len(labels) != len(fits):
        raise ValidationError("pca_params: labels length must match fits")
    data = np.array([p.as_vector() for p in fits])
    mean = data.mean(axis=0)
    centered = data - mean
    stds = centered.std(axis=0, ddof=1)
    # The mean of identical values can wobble by an ulp; a column whose spread
    # sits at roundoff relative to its magnitude is constant, not variance.
    constant = stds <= np.abs(mean) * 1e-12
    centered[:, constant] = 0.0
    if standardize:
        scales = np.where((stds > 0) & ~constant, stds, 1.0)
    else:
        scales = np.ones(5)
    scaled = centered / scales
    cov = (scaled.T @ scaled) / (len(fits) - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    components = eigenvectors[:, order].T
    # Deterministic sign: the largest-magnitude entry of each component is positive.
    for row in components:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    total = float(eigenvalues.sum())
    ratios = eigenvalues / total if total > 0 else np.zeros_like(eigenvalues)
    scores = scaled @ components.T
    return PcaReport(
        mean=mean,
        components=components,
        explained_variance_ratio=ratios,
        eigenvalues=eigenvalues,
        scores=scores,
        scatter_a_alpha=tuple((float(p.A), float(p.alpha)) for p in fits),
        scatter_b_beta=tuple((float(p.B), float(p.beta)) for p in fits),
        standardize=standardize,
        scales=scales,
        labels=tuple(labels),
    )
