"""Metrics, baselines, significance tests and the neurodevelopment analysis.

Pure functions over prediction/label arrays.  The special-function tails
(Student t, chi-square) are computed from the regularized incomplete beta
function via its continued-fraction expansion, so the module has no
dependency beyond numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import (EmptyInput, InsufficientVisits, LengthMismatch,
                     TooFewPoints, ZeroVariance)
from .model import REGIONS

EXACT_MCNEMAR_MAX = 25  # switch to chi-square with continuity correction at b+c >= 25


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError("confusion counts must be nonnegative")

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class BinaryMetrics:
    accuracy: float
    precision: float
    recall: float
    counts: ConfusionCounts
    degenerate_precision: bool = False  # tp+fp == 0, precision 0 by convention


@dataclass(frozen=True)
class McNemarResult:
    b: int          # model wrong, reference right
    c: int          # model right, reference wrong
    statistic: float
    p_value: float
    method: str     # "ExactBinomial" or "ChiSquareCC"

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError("p_value outside [0,1]")


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    n: int
    t_statistic: float
    p_value: float

    def __post_init__(self):
        if abs(self.r) > 1.0 + 1e-12:
            raise ValueError("|r| must be <= 1")


# ---------------------------------------------------------------------------
# Special functions
# ---------------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (Lentz)."""
    MAXIT, EPS, FPMIN = 300, 1e-15, 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, MAXIT + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if abs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        de = d * c
        h *= de
        if abs(de - 1.0) < EPS:
            return h
    return h


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf(t: float, df: float) -> float:
    """Upper-tail probability P(T >= t) of Student's t with df degrees."""
    if df <= 0:
        raise ValueError("df must be positive")
    x = df / (df + t * t)
    p_two = betainc(df / 2.0, 0.5, x)  # two-sided tail mass of |T|
    return p_two / 2.0 if t >= 0 else 1.0 - p_two / 2.0


def chi2_sf_1df(x: float) -> float:
    """Upper-tail probability of chi-square with one degree of freedom."""
    if x < 0:
        raise ValueError("x must be nonnegative")
    return math.erfc(math.sqrt(x / 2.0))


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def _as_bool(a) -> np.ndarray:
    return np.asarray(a).astype(bool)


def binary_metrics(predictions, labels) -> BinaryMetrics:
    """Accuracy / precision / recall of the positive (on-head) class."""
    pred, lab = _as_bool(predictions), _as_bool(labels)
    if pred.shape != lab.shape:
        raise LengthMismatch(f"{pred.shape} vs {lab.shape}")
    if pred.size == 0:
        raise EmptyInput("no rows to score")
    tp = int(np.sum(pred & lab))
    fp = int(np.sum(pred & ~lab))
    tn = int(np.sum(~pred & ~lab))
    fn = int(np.sum(~pred & lab))
    counts = ConfusionCounts(tp, fp, tn, fn)
    degenerate = (tp + fp) == 0
    precision = 0.0 if degenerate else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    accuracy = (tp + tn) / counts.n
    return BinaryMetrics(accuracy, precision, recall, counts, degenerate)


@dataclass(frozen=True)
class MacroMetrics:
    accuracy: float
    precision: float
    recall: float
    per_label: tuple  # BinaryMetrics per region, in REGIONS order


def multilabel_macro_metrics(predictions, labels) -> MacroMetrics:
    """Unweighted mean of per-label binary metrics over the 5 regions."""
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise LengthMismatch(f"{pred.shape} vs {lab.shape}")
    if pred.ndim != 2 or pred.shape[1] != len(REGIONS):
        raise LengthMismatch("expected (n, 5) label matrices")
    if pred.shape[0] == 0:
        raise EmptyInput("no rows to score")
    per = tuple(binary_metrics(pred[:, j], lab[:, j]) for j in range(len(REGIONS)))
    return MacroMetrics(
        accuracy=float(np.mean([m.accuracy for m in per])),
        precision=float(np.mean([m.precision for m in per])),
        recall=float(np.mean([m.recall for m in per])),
        per_label=per,
    )


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroRModel:
    """Constant predictor emitting the training majority class."""
    positive: bool  # binary majority; ties predict the negative class

    def predict(self, n: int) -> np.ndarray:
        return np.full(n, self.positive, dtype=bool)


@dataclass(frozen=True)
class ZeroRCombination:
    """Constant multi-label predictor emitting the majority combination."""
    combination: tuple  # 5 bools

    def predict(self, n: int) -> np.ndarray:
        return np.tile(np.array(self.combination, dtype=np.int8), (n, 1))


def zeror_baseline(train_labels):
    """Majority-class predictor.

    Binary input (1-d): majority of the boolean labels, ties to negative.
    Multi-label input (n, 5): the most frequent observed combination; ties
    prefer fewer positive flags, then lexicographic order.
    """
    lab = np.asarray(train_labels)
    if lab.size == 0:
        raise EmptyInput("empty training labels")
    if lab.ndim == 1:
        pos = int(np.sum(lab.astype(bool)))
        return ZeroRModel(positive=pos > lab.shape[0] - pos)
    if lab.ndim == 2 and lab.shape[1] == len(REGIONS):
        combos: dict = {}
        for row in lab.astype(bool):
            combos[tuple(row)] = combos.get(tuple(row), 0) + 1
        best = min(combos.items(),
                   key=lambda kv: (-kv[1], sum(kv[0]), kv[0]))
        return ZeroRCombination(combination=best[0])
    raise LengthMismatch("labels must be 1-d booleans or (n, 5)")


def random_chance_expectation(prevalence: float) -> BinaryMetrics:
    """Analytic metrics of a uniform random binary predictor.

    Accuracy 0.5, precision equal to the positive prevalence, recall 0.5.
    Counts are not defined for the analytic form and are reported as zeros.
    """
    if not 0.0 <= prevalence <= 1.0:
        raise ValueError("prevalence outside [0,1]")
    return BinaryMetrics(accuracy=0.5, precision=prevalence, recall=0.5,
                         counts=ConfusionCounts(0, 0, 0, 0))


def random_chance_predictor(n: int, seed: int, n_labels: int = 0) -> np.ndarray:
    """Seeded Bernoulli(0.5) predictions used for McNemar pairing."""
    rng = np.random.default_rng(seed)
    if n_labels:
        return (rng.random((n, n_labels)) < 0.5).astype(np.int8)
    return rng.random(n) < 0.5


# ---------------------------------------------------------------------------
# Significance tests
# ---------------------------------------------------------------------------

def mcnemar(model_correct, reference_correct) -> McNemarResult:
    """Paired test on the discordant correctness counts of two predictors.

    Exact two-sided binomial when b+c < 25, otherwise chi-square with
    continuity correction.  b+c == 0 yields p = 1.
    """
    mc, rc = _as_bool(model_correct), _as_bool(reference_correct)
    if mc.shape != rc.shape:
        raise LengthMismatch(f"{mc.shape} vs {rc.shape}")
    b = int(np.sum(~mc & rc))
    c = int(np.sum(mc & ~rc))
    n = b + c
    if n == 0:
        return McNemarResult(b, c, 0.0, 1.0, "ExactBinomial")
    if n < EXACT_MCNEMAR_MAX:
        k = min(b, c)
        cdf_num = sum(math.comb(n, i) for i in range(k + 1))
        p = min(1.0, 2.0 * cdf_num / 2.0 ** n)
        return McNemarResult(b, c, float(k), p, "ExactBinomial")
    stat = (abs(b - c) - 1.0) ** 2 / n
    return McNemarResult(b, c, stat, chi2_sf_1df(stat), "ChiSquareCC")


def pearson(x, y) -> CorrelationResult:
    """Sample Pearson correlation with a two-sided Student-t p-value."""
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise LengthMismatch("x and y must be equal-length vectors")
    n = xa.shape[0]
    if n < 3:
        raise TooFewPoints(f"need at least 3 points, got {n}")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sx = float(np.sqrt(np.sum(xc * xc)))
    sy = float(np.sqrt(np.sum(yc * yc)))
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("constant input")
    r = float(np.sum(xc * yc) / (sx * sy))
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) >= 1.0:
        return CorrelationResult(r, n, math.inf if r > 0 else -math.inf, 0.0)
    t = r * math.sqrt(df / (1.0 - r * r))
    p = betainc(df / 2.0, 0.5, df / (df + t * t))
    return CorrelationResult(r, n, t, p)


# ---------------------------------------------------------------------------
# Neurodevelopment analysis
# ---------------------------------------------------------------------------

def mullen_rate(records: Sequence, category: str,
                age_cutoff_months: float = 5.0) -> float:
    """Least-squares slope (score points/month) over early visits.

    ``records`` are MullenRecord-like objects for a single infant;
    ``category`` selects ``gm_raw`` or ``fm_raw``.  Only visits with
    age <= cutoff qualify, and at least two (at distinct ages) are required.
    """
    if category not in ("gm", "fm"):
        raise ValueError("category must be 'gm' or 'fm'")
    pts = [(rec.visit_age_months, getattr(rec, f"{category}_raw"))
           for rec in records if rec.visit_age_months <= age_cutoff_months]
    if len(pts) < 2:
        raise InsufficientVisits(
            f"need >= 2 visits with age <= {age_cutoff_months}, got {len(pts)}")
    ages = np.array([p[0] for p in pts])
    scores = np.array([p[1] for p in pts])
    var = float(np.sum((ages - ages.mean()) ** 2))
    if var == 0.0:
        raise InsufficientVisits("all qualifying visits share one age")
    cov = float(np.sum((ages - ages.mean()) * (scores - scores.mean())))
    return cov / var


def touch_frequency(on_head_predictions) -> float:
    """Fraction of frames predicted as face touch."""
    pred = _as_bool(on_head_predictions)
    if pred.size == 0:
        raise EmptyInput("no predicted frames")
    return float(np.mean(pred))


# ---------------------------------------------------------------------------
# Report assembly
# ---------------------------------------------------------------------------

SIGNIFICANCE_ALPHA = 0.01


@dataclass
class ModelRow:
    name: str
    accuracy: float
    precision: float
    recall: float
    mcnemar_vs_zeror: Optional[McNemarResult] = None
    mcnemar_vs_random: Optional[McNemarResult] = None

    def significant(self) -> bool:
        tests = [self.mcnemar_vs_zeror, self.mcnemar_vs_random]
        return all(t is not None and t.p_value < SIGNIFICANCE_ALPHA
                   for t in tests)


@dataclass
class ConfigReport:
    configuration: str
    task: str                       # "binary" or "regions"
    n_test: int
    prevalence: float               # positive rate (binary) / mean region rate
    rows: list = field(default_factory=list)
    notices: list = field(default_factory=list)


@dataclass
class EvalReport:
    configs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        def mc(m):
            if m is None:
                return None
            return {"b": m.b, "c": m.c, "statistic": m.statistic,
                    "p_value": m.p_value, "method": m.method}
        return {"configurations": [
            {"configuration": c.configuration, "task": c.task,
             "n_test": c.n_test, "prevalence": c.prevalence,
             "notices": c.notices,
             "rows": [{"model": r.name, "accuracy": r.accuracy,
                       "precision": r.precision, "recall": r.recall,
                       "mcnemar_vs_zeror": mc(r.mcnemar_vs_zeror),
                       "mcnemar_vs_random": mc(r.mcnemar_vs_random),
                       "significant_p<0.01": r.significant()
                       if (r.mcnemar_vs_zeror or r.mcnemar_vs_random) else None}
                      for r in c.rows]}
            for c in self.configs]}

    def render_text(self) -> str:
        lines = []
        for c in self.configs:
            head = ("Accuracy", "Precision On Head", "Recall On Head") \
                if c.task == "binary" else \
                ("Accuracy", "Precision Key Area", "Recall Key Area")
            lines.append(f"== {c.configuration} ({c.task}, n={c.n_test}) ==")
            for notice in c.notices:
                lines.append(f"  note: {notice}")
            widths = [22, 10, 20, 16]
            lines.append("  " + "Model".ljust(widths[0])
                         + head[0].rjust(widths[1]) + head[1].rjust(widths[2])
                         + head[2].rjust(widths[3]))
            for r in c.rows:
                cells = [f"{100 * v:.1f}%" for v in
                         (r.accuracy, r.precision, r.recall)]
                mark = ""
                if r.mcnemar_vs_zeror is not None:
                    mark = " *" if r.significant() else "  "
                lines.append("  " + r.name.ljust(widths[0])
                             + cells[0].rjust(widths[1])
                             + cells[1].rjust(widths[2])
                             + cells[2].rjust(widths[3]) + mark)
            lines.append("")
        lines.append(f"* significantly different from both baselines "
                     f"(McNemar, p < {SIGNIFICANCE_ALPHA})")
        return "\n".join(lines) + "\n"


def correctness_binary(pred, labels) -> np.ndarray:
    return _as_bool(pred) == _as_bool(labels)


def correctness_multilabel(pred, labels) -> np.ndarray:
    """Per-(row,label) correctness flattened for McNemar pairing."""
    p = np.asarray(pred).astype(bool)
    l = np.asarray(labels).astype(bool)
    if p.shape != l.shape:
        raise LengthMismatch(f"{p.shape} vs {l.shape}")
    return (p == l).reshape(-1)


def build_config_report(configuration: str, task: str,
                        model_predictions: dict, test_labels,
                        train_labels, seed: int) -> ConfigReport:
    """Score every model against baselines on one dataset configuration.

    ``model_predictions`` maps model name to predictions; binary task uses
    boolean vectors, regions task uses (n, 5) matrices.  ``train_labels``
    feed the ZeroR baseline, ``test_labels`` everything else.
    """
    test_labels = np.asarray(test_labels)
    n = test_labels.shape[0]
    if n == 0:
        raise EmptyInput("empty test labels")
    zr = zeror_baseline(np.asarray(train_labels))
    report = ConfigReport(configuration=configuration, task=task, n_test=n,
                          prevalence=float(np.mean(test_labels)))

    if task == "binary":
        rc_pred = random_chance_predictor(n, seed)
        zr_pred = zr.predict(n)
        rc_m = binary_metrics(rc_pred, test_labels)
        report.rows.append(ModelRow(
            "Random Chance", *_rc_analytic(report.prevalence)))
        zm = binary_metrics(zr_pred, test_labels)
        report.rows.append(ModelRow("Zero Rule", zm.accuracy, zm.precision,
                                    zm.recall))
        zr_correct = correctness_binary(zr_pred, test_labels)
        rc_correct = correctness_binary(rc_pred, test_labels)
        for name, pred in model_predictions.items():
            m = binary_metrics(pred, test_labels)
            mc = correctness_binary(pred, test_labels)
            report.rows.append(ModelRow(
                name, m.accuracy, m.precision, m.recall,
                mcnemar_vs_zeror=mcnemar(mc, zr_correct),
                mcnemar_vs_random=mcnemar(mc, rc_correct)))
        _ = rc_m  # sampled-baseline metrics retained only through pairing
    elif task == "regions":
        rc_pred = random_chance_predictor(n, seed, n_labels=len(REGIONS))
        zr_pred = zr.predict(n)
        report.rows.append(ModelRow(
            "Random Chance", 0.5, report.prevalence, 0.5))
        zm = multilabel_macro_metrics(zr_pred, test_labels)
        report.rows.append(ModelRow("Zero Rule", zm.accuracy, zm.precision,
                                    zm.recall))
        zr_correct = correctness_multilabel(zr_pred, test_labels)
        rc_correct = correctness_multilabel(rc_pred, test_labels)
        for name, pred in model_predictions.items():
            m = multilabel_macro_metrics(pred, test_labels)
            mc = correctness_multilabel(pred, test_labels)
            report.rows.append(ModelRow(
                name, m.accuracy, m.precision, m.recall,
                mcnemar_vs_zeror=mcnemar(mc, zr_correct),
                mcnemar_vs_random=mcnemar(mc, rc_correct)))
    else:
        raise ValueError(f"unknown task {task!r}")
    return report


def _rc_analytic(prevalence: float) -> tuple:
    m = random_chance_expectation(prevalence)
    return m.accuracy, m.precision, m.recall
