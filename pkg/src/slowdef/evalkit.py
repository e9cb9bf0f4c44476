"""Detection-threshold fitting, threshold sweeps and ROC analysis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .detect import probability_maps, wrapped_gray
from .errors import ConvergenceError, DomainError, IllPosedFitError, SlowdefError
from .raster import PhaseGrid
from .rewrap import C_BAND_WAVELENGTH_M

log = logging.getLogger(__name__)

MAX_ITER = 200
STEP_TOL = 1e-9
LAMBDA0 = 1e-3


def sigmoid(x, a, b):
    # expit is overflow-free, accurate in both tails and exactly 0.5 at x == b
    return expit(a * (np.asarray(x, dtype=np.float64) - b))


@dataclass
class DetectionCurve:
    samples: np.ndarray
    a: float
    b: float
    residual: float
    iterations: int = 0

    def __call__(self, x):
        return sigmoid(x, self.a, self.b)

    @property
    def threshold(self) -> float:
        return self.b


def _crossing(xs, ps, level):
    """First x at which the sorted sample sequence reaches ``level`` (linear interpolation)."""
    above = ps >= level
    if above[0]:
        return xs[0]
    k = int(np.argmax(above))
    if not above[k]:
        return xs[-1]
    x0, x1, p0, p1 = xs[k - 1], xs[k], ps[k - 1], ps[k]
    return x0 + (level - p0) * (x1 - x0) / (p1 - p0)


def _initial_guess(x, p):
    b0 = float(x[np.argmin(np.abs(p - 0.5))])
    order = np.argsort(x, kind="stable")
    xs, ps = x[order], p[order]
    increasing = np.mean(ps[xs > b0]) >= np.mean(ps[xs <= b0]) if np.any(xs > b0) else True
    if not increasing:
        ps = 1.0 - ps
    span = _crossing(xs, ps, 0.9) - _crossing(xs, ps, 0.1)
    if not span > 0:
        span = max(float(np.ptp(x)), np.finfo(float).tiny) / 4.0
    a0 = 4.0 / span
    return (a0 if increasing else -a0), b0


def fit_sigmoid(x, p=None, *, max_iter: int = MAX_ITER, step_tol: float = STEP_TOL) -> DetectionCurve:
    """Least-squares fit of ``1 / (1 + exp(-a (x - b)))`` by Levenberg-Marquardt.

    Accepts either ``(x, p)`` arrays or a single sequence of (x, p) pairs.
    Convergence when every parameter step is below ``step_tol`` relative to
    the parameter's natural scale (|a| or 1/span(x) for a; span(x) for b).
    """
    if p is None:
        arr = np.asarray(x, dtype=np.float64)
        x, p = arr[:, 0], arr[:, 1]
    x = np.asarray(x, dtype=np.float64).ravel()
    p = np.asarray(p, dtype=np.float64).ravel()
    if x.shape != p.shape:
        raise IllPosedFitError(f"x and p differ in length: {x.size} vs {p.size}")
    if x.size < 4:
        raise IllPosedFitError(f"need at least 4 samples, got {x.size}")
    if not (np.any(p < 0.5) and np.any(p > 0.5)):
        raise IllPosedFitError("samples do not straddle p = 0.5")
    span = float(np.ptp(x))
    if not span > 0:
        raise IllPosedFitError("all samples share one x value")
    a, b = _initial_guess(x, p)
    lam = LAMBDA0

    def cost(a_, b_):
        r = sigmoid(x, a_, b_) - p
        return float(r @ r), r

    c, r = cost(a, b)
    for it in range(1, max_iter + 1):
        f = r + p
        dfdz = f * (1.0 - f)
        jac = np.column_stack([dfdz * (x - b), -a * dfdz])
        jtj = jac.T @ jac
        grad = jac.T @ r
        while True:
            damped = jtj + lam * np.diag(np.diag(jtj))
            try:
                step = -np.linalg.solve(damped, grad)
            except np.linalg.LinAlgError:
                step = np.array([np.nan, np.nan])
            if np.all(np.isfinite(step)):
                c_new, r_new = cost(a + step[0], b + step[1])
                if c_new <= c:
                    break
            lam *= 10.0
            if lam > 1e16:
                # no descent direction left at working precision: at the minimum
                return DetectionCurve(np.column_stack([x, p]), float(a), float(b), c, it)
        a, b = a + step[0], b + step[1]
        c, r = c_new, r_new
        lam = max(lam / 10.0, 1e-12)
        scale_a = max(abs(a), 1.0 / span)
        if abs(step[0]) < step_tol * scale_a and abs(step[1]) < step_tol * span:
            return DetectionCurve(np.column_stack([x, p]), float(a), float(b), c, it)
    raise ConvergenceError(f"sigmoid fit did not converge in {max_iter} iterations "
                           f"(a={a:g}, b={b:g}, residual={c:g})", params=(a, b), residual=c)


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @property
    def points(self):
        return np.column_stack([self.fpr, self.tpr])


def roc(scores, truth=None) -> RocCurve:
    """ROC by sweeping a ``score >= t`` rule over every distinct score.

    Sentinel thresholds +inf (nothing positive) and -inf (everything positive)
    bracket the sweep. AUC is trapezoidal over (FPR, TPR), which equals the
    Mann-Whitney statistic with half credit for ties.
    """
    if truth is None:
        pairs = list(scores)
        scores = [s for s, _ in pairs]
        truth = [t for _, t in pairs]
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(truth, dtype=bool)
    if s.shape != y.shape:
        raise DomainError("scores and labels differ in length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DomainError(f"ROC needs both classes, got {n_pos} positive and {n_neg} negative")
    distinct = np.unique(s)[::-1]
    # counts of positives/negatives with score >= each distinct threshold
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp_cum = np.cumsum(y_sorted)
    fp_cum = np.cumsum(~y_sorted)
    last = np.searchsorted(-s_sorted, -distinct, side="right") - 1
    tpr = np.concatenate([[0.0], tp_cum[last] / n_pos, [1.0]])
    fpr = np.concatenate([[0.0], fp_cum[last] / n_neg, [1.0]])
    thresholds = np.concatenate([[np.inf], distinct, [-np.inf]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(thresholds, fpr, tpr, auc)


def roc_timeseries(result, onset_date, positive_point: str = "B", negative_point: str = "A") -> dict:
    """One ROC per wrap gain plus ``"mean"`` for the ensemble.

    Positive samples are ``positive_point`` dates on or after the onset;
    everything else (all ``negative_point`` dates, earlier positive-point
    dates) is negative. ``onset_date=None`` declares a stack without
    deformation, which has no positives and is rejected.
    """
    dates = list(result.dates)
    if not dates:
        raise DomainError("empty time series")
    if onset_date is not None and not dates[0] <= onset_date <= dates[-1]:
        raise DomainError(f"onset {onset_date} outside series span {dates[0]}..{dates[-1]}")
    for name in (positive_point, negative_point):
        if name not in result.points:
            raise DomainError(f"unknown point {name!r}")
    pos_labels = [onset_date is not None and d >= onset_date for d in dates]
    labels = np.array(pos_labels + [False] * len(dates))
    curves = {}
    series = {g: (result.point_probabilities[positive_point][g], result.point_probabilities[negative_point][g])
              for g in result.gains}
    if result.ensemble_series is not None:
        series["mean"] = (result.ensemble_series[positive_point], result.ensemble_series[negative_point])
    for key, (pos, neg) in series.items():
        curves[key] = roc(np.concatenate([pos, neg]), labels)
    return curves


@dataclass
class SweepResult:
    table: list = field(default_factory=list)
    scatter: list = field(default_factory=list)

    def thresholds(self, param_kind, param_value):
        return {(row["alpha"], row["beta"]): row["b"] for row in self.table
                if row["param_kind"] == param_kind and row["param_value"] == param_value}


def _item_grid(item):
    if isinstance(item, dict):
        from .raster import read_fgr
        return read_fgr(item["path"])
    return item.grid


def _item_meta(item):
    if isinstance(item, dict):
        return (item["item_id"], item["alpha"], item["beta"], item["max_displacement_m"],
                item.get("source_row"), item.get("source_col"))
    return (item.item_id, item.weights.alpha, item.weights.beta, item.max_displacement_m,
            item.source.source_row, item.source.source_col)


def sample_item(item, classifier, settings, wavelength_m=C_BAND_WAVELENGTH_M):
    """Probability at the source pixel for each (mu, tau) in ``settings``."""
    grid: PhaseGrid = _item_grid(item)
    _, _, _, _, sr, sc = _item_meta(item)
    if sr is None or sc is None or sr != sr:
        sr, sc = (grid.rows - 1) / 2.0, (grid.cols - 1) / 2.0
    r = min(max(int(round(sr)), 0), grid.rows - 1)
    c = min(max(int(round(sc)), 0), grid.cols - 1)
    images = [wrapped_gray(grid, mu, tau, wavelength_m) for mu, tau in settings]
    maps = probability_maps(images, classifier)
    return [float(m.values[r, c]) for m in maps]


def threshold_sweep(items, classifier, gains=(1, 2, 4, 8), taus=(0.0, np.pi / 2, np.pi, 3 * np.pi / 2),
                    wavelength_m: float = C_BAND_WAVELENGTH_M, threads: int = 1) -> SweepResult:
    """Fit a detection threshold per (alpha, beta) cell and wrap parameter.

    Gain sweeps use tau = 0; shift sweeps use mu = 1. ``items`` are dataset
    items or manifest rows.
    """
    settings = sorted({(int(g), 0.0) for g in gains} | {(1, float(t)) for t in taus})
    items = list(items)

    def work(item):
        return _item_meta(item), sample_item(item, classifier, settings, wavelength_m)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, items))
    else:
        results = [work(it) for it in items]

    out = SweepResult()
    cells = {}
    for (item_id, alpha, beta, max_disp, _, _), probs in results:
        prob_by_setting = dict(zip(settings, probs))
        for kind, values in (("mu", gains), ("tau", taus)):
            for v in values:
                key = (int(v), 0.0) if kind == "mu" else (1, float(v))
                p = prob_by_setting[key]
                pv = int(v) if kind == "mu" else float(v)
                out.scatter.append(dict(item_id=item_id, alpha=alpha, beta=beta, param_kind=kind,
                                        param_value=pv, max_displacement_m=max_disp, probability=p))
                cells.setdefault((alpha, beta, kind, pv), []).append((max_disp, p))
    for (alpha, beta, kind, pv), samples in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3])):
        row = dict(alpha=alpha, beta=beta, param_kind=kind, param_value=pv,
                   a=float("nan"), b=float("nan"), residual=float("nan"), n_ill_posed=0)
        try:
            curve = fit_sigmoid(samples)
            row.update(a=curve.a, b=curve.b, residual=curve.residual)
        except SlowdefError as exc:
            log.warning("cell alpha=%s beta=%s %s=%s: %s", alpha, beta, kind, pv, exc)
            row["n_ill_posed"] = 1
        out.table.append(row)
    return out
