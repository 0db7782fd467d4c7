"""Utterance- and system-level metrics plus cross-test-set aggregation.

Correlations on constant vectors are undefined and raise
:class:`UndefinedCorrelationError` instead of silently returning 0 or NaN.
Spearman uses average ranks for ties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedCorrelationError, UndefinedRatioError, ValidationError

__all__ = [
    "EvalPairs",
    "MetricReport",
    "BenchCell",
    "BenchMatrix",
    "mse",
    "pearson",
    "spearman",
    "system_aggregate",
    "compute_report",
    "best_score_difference",
    "best_score_ratio",
    "aggregate",
    "DEFAULT_METRIC_KEYS",
]


@dataclass(frozen=True)
class EvalPairs:
    """Aligned true/predicted scores for one evaluation.

    ``system_ids`` entries may be None; system-level metrics require all of
    them to be present.
    """

    sample_ids: tuple[str, ...]
    system_ids: tuple[str | None, ...]
    true: np.ndarray
    pred: np.ndarray

    def __post_init__(self):
        true = np.asarray(self.true, dtype=np.float64)
        pred = np.asarray(self.pred, dtype=np.float64)
        object.__setattr__(self, "true", true)
        object.__setattr__(self, "pred", pred)
        n = len(self.sample_ids)
        if n == 0:
            raise ValidationError("EvalPairs must be non-empty")
        if not (len(self.system_ids) == true.shape[0] == pred.shape[0] == n):
            raise ValidationError("EvalPairs fields must have equal length")
        if not (np.all(np.isfinite(true)) and np.all(np.isfinite(pred))):
            raise ValidationError("EvalPairs values must be finite")

    def __len__(self) -> int:
        return len(self.sample_ids)

    @property
    def has_systems(self) -> bool:
        return all(s is not None for s in self.system_ids)


@dataclass(frozen=True)
class MetricReport:
    """Six standard metrics; system fields are None without system labels."""

    utt_mse: float
    utt_lcc: float
    utt_srcc: float
    sys_mse: float | None = None
    sys_lcc: float | None = None
    sys_srcc: float | None = None

    def get(self, key: str) -> float:
        value = getattr(self, key)
        if value is None:
            raise ValidationError(f"metric {key!r} is not available in this report")
        return float(value)


def mse(pairs: EvalPairs) -> float:
    """Mean squared error between predictions and true scores."""
    diff = pairs.pred - pairs.true
    return float(np.mean(diff * diff))


def _pearson_xy(x: np.ndarray, y: np.ndarray) -> float:
    if x.shape[0] < 2:
        raise UndefinedCorrelationError("pearson requires at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("pearson is undefined for a constant vector")
    return float((xc @ yc) / np.sqrt(sxx * syy))


def pearson(pairs: EvalPairs) -> float:
    """Sample Pearson correlation of (true, pred)."""
    return _pearson_xy(pairs.true, pairs.pred)


def spearman(pairs: EvalPairs) -> float:
    """Spearman rank correlation: Pearson on average ranks (ties averaged)."""
    rx = rankdata(pairs.true, method="average")
    ry = rankdata(pairs.pred, method="average")
    try:
        return _pearson_xy(rx, ry)
    except UndefinedCorrelationError:
        raise UndefinedCorrelationError("spearman is undefined: zero rank variance")


def system_aggregate(pairs: EvalPairs) -> EvalPairs:
    """Collapse to one pair per system: mean true and mean pred.

    Output is sorted by system id, so it is invariant to utterance order.
    """
    if not pairs.has_systems:
        raise ValidationError("system_aggregate requires a system_id on every pair")
    systems = sorted(set(pairs.system_ids))  # type: ignore[type-var]
    true_means = []
    pred_means = []
    for sysid in systems:
        idx = [i for i, s in enumerate(pairs.system_ids) if s == sysid]
        true_means.append(float(np.mean(pairs.true[idx])))
        pred_means.append(float(np.mean(pairs.pred[idx])))
    return EvalPairs(
        sample_ids=tuple(systems),
        system_ids=tuple(systems),
        true=np.array(true_means),
        pred=np.array(pred_means),
    )


def compute_report(pairs: EvalPairs) -> MetricReport:
    """All six metrics; system-level ones only when every pair has a system."""
    utt_mse = mse(pairs)
    utt_lcc = pearson(pairs)
    utt_srcc = spearman(pairs)
    if pairs.has_systems:
        sys_pairs = system_aggregate(pairs)
        return MetricReport(
            utt_mse=utt_mse,
            utt_lcc=utt_lcc,
            utt_srcc=utt_srcc,
            sys_mse=mse(sys_pairs),
            sys_lcc=pearson(sys_pairs),
            sys_srcc=spearman(sys_pairs),
        )
    return MetricReport(utt_mse=utt_mse, utt_lcc=utt_lcc, utt_srcc=utt_srcc)


def best_score_difference(model_mse: float, best_mse: float) -> float:
    """Model MSE minus the best model's MSE (0 means this model is best)."""
    return float(model_mse) - float(best_mse)


def best_score_ratio(model_corr: float, best_corr: float) -> float:
    """Model correlation over the best model's correlation, in percent."""
    if best_corr == 0.0:
        raise UndefinedRatioError("best correlation is zero; ratio undefined")
    return 100.0 * float(model_corr) / float(best_corr)


# Per-domain default choice of (error metric, correlation metric) per cell.
DEFAULT_METRIC_KEYS: dict[str, tuple[str, str]] = {
    "synthetic": ("sys_mse", "sys_srcc"),
    "non-synthetic": ("utt_mse", "utt_lcc"),
}


@dataclass(frozen=True)
class BenchCell:
    """One (model, test) cell after aggregation."""

    mse: float
    corr: float
    difference: float
    ratio: float


@dataclass
class BenchMatrix:
    """Per-(model, test) best-score results plus averages.

    ``averages[model]`` maps each domain tag plus ``"average"`` to a
    (mean difference, mean ratio) tuple; the overall average weights every
    test set equally.
    """

    model_ids: list[str]
    test_ids: list[str]
    test_domains: dict[str, str]
    cells: dict[tuple[str, str], BenchCell]
    best_by_test: dict[str, tuple[str, str]] = field(default_factory=dict)
    averages: dict[str, dict[str, tuple[float, float]]] = field(default_factory=dict)


def aggregate(
    reports: dict[tuple[str, str], MetricReport],
    test_domains: dict[str, str],
    metric_keys: dict[str, tuple[str, str]] | None = None,
    best: str | dict[str, tuple[float, float]] = "within-family",
) -> BenchMatrix:
    """Fill best-score differences/ratios for a (model, test) report grid.

    ``best`` selects the policy: ``"within-family"`` takes the best value
    among the models in ``reports`` per test set, or pass an explicit
    ``{test_id: (best_mse, best_corr)}`` mapping as an external reference.
    Which metric fills a cell is chosen per test set by ``metric_keys``
    (default: system-level MSE/SRCC for synthetic sets, utterance-level
    MSE/LCC otherwise). Ratios assume the best correlation is positive.
    """
    model_ids = sorted({m for m, _ in reports})
    test_ids = sorted({t for _, t in reports})
    if not model_ids or not test_ids:
        raise ValidationError("aggregate requires at least one report")
    for t in test_ids:
        if t not in test_domains:
            raise ValidationError(f"no domain tag for test set {t!r}")
        for m in model_ids:
            if (m, t) not in reports:
                raise ValidationError(f"missing report for ({m!r}, {t!r})")

    cells: dict[tuple[str, str], BenchCell] = {}
    best_by_test: dict[str, tuple[str, str]] = {}
    for t in test_ids:
        if metric_keys is not None and t in metric_keys:
            mse_key, corr_key = metric_keys[t]
        else:
            mse_key, corr_key = DEFAULT_METRIC_KEYS[test_domains[t]]
        values = {m: (reports[m, t].get(mse_key), reports[m, t].get(corr_key)) for m in model_ids}
        if isinstance(best, dict):
            best_mse, best_corr = best[t]
            best_by_test[t] = ("<reference>", "<reference>")
        else:
            if best != "within-family":
                raise ValidationError(f"unknown best policy {best!r}")
            best_mse_model = min(model_ids, key=lambda m: values[m][0])
            best_corr_model = max(model_ids, key=lambda m: values[m][1])
            best_mse = values[best_mse_model][0]
            best_corr = values[best_corr_model][1]
            best_by_test[t] = (best_mse_model, best_corr_model)
        for m in model_ids:
            cell_mse, cell_corr = values[m]
            cells[m, t] = BenchCell(
                mse=cell_mse,
                corr=cell_corr,
                difference=best_score_difference(cell_mse, best_mse),
                ratio=best_score_ratio(cell_corr, best_corr),
            )

    domains = sorted(set(test_domains[t] for t in test_ids))
    averages: dict[str, dict[str, tuple[float, float]]] = {}
    for m in model_ids:
        by_domain: dict[str, tuple[float, float]] = {}
        for d in domains:
            in_domain = [t for t in test_ids if test_domains[t] == d]
            by_domain[d] = (
                float(np.mean([cells[m, t].difference for t in in_domain])),
                float(np.mean([cells[m, t].ratio for t in in_domain])),
            )
        by_domain["average"] = (
            float(np.mean([cells[m, t].difference for t in test_ids])),
            float(np.mean([cells[m, t].ratio for t in test_ids])),
        )
        averages[m] = by_domain

    return BenchMatrix(
        model_ids=model_ids,
        test_ids=test_ids,
        test_domains=dict(test_domains),
        cells=cells,
        best_by_test=best_by_test,
        averages=averages,
    )
