"""Mission evaluation: safety, trajectory complexity, the composite agility
score, paired normal-vs-enhanced comparisons, and predictor error reports.

Safety is the minimum obstacle distance over the mission; every other
component takes the maximum (power) or a whole-trace statistic (complexity
is the variance of the flown curvature series).  The literal agility sum
P + C + S mixes watts, (1/m)^2 and meters; a normalized variant divides each
term by its envelope-level reference so no single unit dominates.  Both are
reported, and paired comparisons use both.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .trajectory import Trajectory, curvature_series

__all__ = [
    "AgilityReport",
    "BenchmarkReport",
    "REFERENCE_VALUES",
    "safety_score",
    "complexity_score",
    "complexity_from_curvature",
    "power_term",
    "agility_report",
    "compare",
    "mae_report",
    "write_fig5_mae",
    "write_fig7_power",
    "write_durations",
]

# Normalization references: envelope-level scales for each agility component.
POWER_REF_W = 30.0
COMPLEXITY_REF = 1.0
SAFETY_REF_M = 3.0

# Published quantities from the study this benchmark mirrors.  They depend on
# unpublished scenario internals, so they are carried in report footers as
# context and are never asserted against.
REFERENCE_VALUES = {
    "note": "published reference levels; annotation only, never asserted",
    "safety_improvement_pct": 58.16,
    "complexity_improvement_pct": 84.86,
    "agility_improvement_pct": 40.25,
    "duration_improvement_pct": {"scenario_1": -10.45, "scenario_2": -9.05},
    "complexity_improvement_by_scenario_pct": {"scenario_1": 94.57, "scenario_2": 44.13},
    "avg_curvature_enhanced": [1.53, 7.60],
    "avg_curvature_normal": [0.08, 4.25],
    "avg_curvature_improvement_pct": 47.19,
    "safety_enhanced_vs_normal_m": {"scenario_1": [3.18, 2.95], "scenario_2": [2.56, 0.20]},
    "safety_improvement_by_scenario_pct": {"scenario_1": 9.84, "scenario_2": 93.21},
    "duration_medians_s": {"scenario_1": [1.97, 2.18], "scenario_2": [1.99, 2.19]},
    "ensemble_max_error_ratio_pct": 58.34,
    "ensemble_peak_error_ratio_pct": 31.25,
}


def _require_trace(trace) -> None:
    if len(trace.times) == 0:
        raise ValueError("empty trace")


def safety_score(trace) -> float:
    """Worst-case obstacle margin over the mission, in meters."""
    _require_trace(trace)
    return float(np.min(trace.min_dist))


def complexity_from_curvature(series) -> float:
    series = np.asarray(series, dtype=float)
    if series.size == 0:
        raise ValueError("empty curvature series")
    return float(np.var(series))


def complexity_score(trace) -> float:
    """Variance of the flown curvature series, in (1/m)^2."""
    _require_trace(trace)
    flown = Trajectory(trace.times, trace.positions, sample_interval=trace.sample_interval)
    return complexity_from_curvature(curvature_series(flown))


def power_term(trace) -> tuple[float, float]:
    """(max, mean) supplied power over the mission, in watts."""
    _require_trace(trace)
    supplied = trace.supplied
    return float(np.max(supplied)), float(np.mean(supplied))


@dataclass(frozen=True)
class AgilityReport:
    power_max_w: float
    power_mean_w: float
    complexity: float
    safety_m: float

    @property
    def agility(self) -> float:
        return self.power_max_w + self.complexity + self.safety_m

    @property
    def agility_norm(self) -> float:
        return (
            self.power_max_w / POWER_REF_W
            + self.complexity / COMPLEXITY_REF
            + self.safety_m / SAFETY_REF_M
        )

    def to_dict(self) -> dict:
        return {
            "power_max_w": self.power_max_w,
            "power_mean_w": self.power_mean_w,
            "complexity": self.complexity,
            "safety_m": self.safety_m,
            "agility": self.agility,
            "agility_norm": self.agility_norm,
        }


def agility_report(trace) -> AgilityReport:
    p_max, p_mean = power_term(trace)
    return AgilityReport(
        power_max_w=p_max,
        power_mean_w=p_mean,
        complexity=complexity_score(trace),
        safety_m=safety_score(trace),
    )


# ---------------------------------------------------------------------------
# paired comparison


def _sign_test_p(n_pos: int, n_neg: int) -> float:
    """Two-sided exact binomial sign test at p=0.5, ties already removed."""
    n = n_pos + n_neg
    if n == 0:
        return 1.0
    k = min(n_pos, n_neg)
    tail = sum(math.comb(n, j) for j in range(k + 1)) / 2.0**n
    return min(1.0, 2.0 * tail)


def _pct(enhanced: float, normal: float) -> float | None:
    if abs(normal) < 1e-12:
        return None
    return 100.0 * (enhanced - normal) / normal


def _agg(values: list) -> dict:
    vals = [v for v in values if v is not None]
    if not vals:
        return {"mean": None, "median": None, "n": 0}
    return {"mean": float(np.mean(vals)), "median": float(np.median(vals)), "n": len(vals)}


def _mode_stats(reports: list, traces: list) -> dict:
    durations = [t.duration_s for t in traces]
    totals = [t.duration_s + t.precharge_s for t in traces]
    n_success = sum(1 for t in traces if t.outcome == "success")
    return {
        "runs": len(traces),
        "success_rate": n_success / len(traces),
        "safety_m": _agg([r.safety_m for r in reports]),
        "complexity": _agg([r.complexity for r in reports]),
        "agility": _agg([r.agility for r in reports]),
        "agility_norm": _agg([r.agility_norm for r in reports]),
        "power_max_w": _agg([r.power_max_w for r in reports]),
        "power_mean_w": _agg([r.power_mean_w for r in reports]),
        "duration_s": _agg(durations),
        "total_with_precharge_s": _agg(totals),
    }


METRIC_KEYS = ("safety", "complexity", "agility", "agility_norm", "duration")


@dataclass(frozen=True)
class BenchmarkReport:
    per_mode: dict
    pairs: list
    improvements: dict
    improvements_by_scenario: dict
    scenario_mean_improvements: dict

    def to_dict(self) -> dict:
        return {
            "per_mode": self.per_mode,
            "pairs": self.pairs,
            "improvements": self.improvements,
            "improvements_by_scenario": self.improvements_by_scenario,
            "scenario_mean_improvements": self.scenario_mean_improvements,
            "reference_values": REFERENCE_VALUES,
        }


def compare(normal_traces: list, enhanced_traces: list) -> BenchmarkReport:
    """Paired evaluation of matched (scenario, seed) runs across the modes.

    Percentage improvements are (enhanced - normal)/normal per pair, so signs
    follow the metric (safety up is positive, duration down is negative).
    Duration pairs where either run failed are excluded; the other metrics
    keep failed runs since a collision is exactly what safety should punish.
    Aggregation is emitted both over all pairs and per scenario class.
    """
    if not normal_traces or len(normal_traces) != len(enhanced_traces):
        raise ValueError("need equal-length, non-empty trace lists")
    key = lambda t: (t.complexity, t.seed)
    normal = sorted(normal_traces, key=key)
    enhanced = sorted(enhanced_traces, key=key)
    if [key(t) for t in normal] != [key(t) for t in enhanced]:
        raise ValueError("trace lists do not cover the same (scenario, seed) pairs")

    pairs = []
    for nt, et in zip(normal, enhanced):
        nr, er = agility_report(nt), agility_report(et)
        both_ok = nt.outcome == "success" and et.outcome == "success"
        pairs.append(
            {
                "complexity": nt.complexity,
                "seed": nt.seed,
                "normal": {**nr.to_dict(), "duration_s": nt.duration_s, "outcome": nt.outcome},
                "enhanced": {**er.to_dict(), "duration_s": et.duration_s, "outcome": et.outcome},
                "improvement_pct": {
                    "safety": _pct(er.safety_m, nr.safety_m),
                    "complexity": _pct(er.complexity, nr.complexity),
                    "agility": _pct(er.agility, nr.agility),
                    "agility_norm": _pct(er.agility_norm, nr.agility_norm),
                    "duration": _pct(et.duration_s, nt.duration_s) if both_ok else None,
                },
            }
        )

    def summarize(pair_subset: list) -> dict:
        out = {}
        for m in METRIC_KEYS:
            deltas = [p["improvement_pct"][m] for p in pair_subset]
            stats = _agg(deltas)
            present = [d for d in deltas if d is not None]
            n_pos = sum(1 for d in present if d > 0)
            n_neg = sum(1 for d in present if d < 0)
            stats.update(
                {"n_positive": n_pos, "n_negative": n_neg, "sign_test_p": _sign_test_p(n_pos, n_neg)}
            )
            out[m] = stats
        return out

    scenarios = sorted({p["complexity"] for p in pairs})
    by_scenario = {s: summarize([p for p in pairs if p["complexity"] == s]) for s in scenarios}
    # scenario-mean aggregation: average the per-scenario means so an uneven
    # seed count cannot let one scenario class dominate
    scenario_mean = {}
    for m in METRIC_KEYS:
        means = [by_scenario[s][m]["mean"] for s in scenarios]
        means = [v for v in means if v is not None]
        scenario_mean[m] = float(np.mean(means)) if means else None

    per_mode = {}
    for name, traces in (("normal", normal), ("agility_enhanced", enhanced)):
        reports = [agility_report(t) for t in traces]
        per_mode[name] = _mode_stats(reports, traces)
        per_mode[name]["by_scenario"] = {
            s: _mode_stats(
                [agility_report(t) for t in traces if t.complexity == s],
                [t for t in traces if t.complexity == s],
            )
            for s in scenarios
        }

    return BenchmarkReport(
        per_mode=per_mode,
        pairs=pairs,
        improvements=summarize(pairs),
        improvements_by_scenario=by_scenario,
        scenario_mean_improvements=scenario_mean,
    )


# ---------------------------------------------------------------------------
# predictor error reporting


def mae_report(backends: dict, dataset) -> dict:
    """Per-backend MAE, max error, and error in the peak-demand window.

    The peak window is the 11 rows centered on the largest label.  Ratios are
    emitted for every ordered backend pair (None when the denominator is 0).
    """
    if not backends:
        raise ValueError("need at least one backend")
    feats = np.asarray(dataset.features, dtype=float)
    labels = np.asarray(dataset.labels, dtype=float)
    if labels.size == 0:
        raise ValueError("empty test dataset")
    peak = int(np.argmax(labels))
    window = slice(max(peak - 5, 0), peak + 6)

    entries = {}
    for name in sorted(backends):
        preds = np.asarray(backends[name].forward(feats), dtype=float)
        err = np.abs(preds - labels)
        entries[name] = {
            "mae_w": float(np.mean(err)),
            "max_error_w": float(np.max(err)),
            "peak_window_mae_w": float(np.mean(err[window])),
        }

    ratios = {}
    for a in sorted(backends):
        for b in sorted(backends):
            if a == b:
                continue
            ratios[f"{a}_over_{b}"] = {
                k: (entries[a][k] / entries[b][k] if entries[b][k] > 0 else None)
                for k in ("mae_w", "max_error_w", "peak_window_mae_w")
            }

    return {
        "backends": entries,
        "ratios": ratios,
        "peak_row": peak,
        "n_rows": int(labels.size),
        "reference_values": {
            "note": REFERENCE_VALUES["note"],
            "ensemble_max_error_ratio_pct": REFERENCE_VALUES["ensemble_max_error_ratio_pct"],
            "ensemble_peak_error_ratio_pct": REFERENCE_VALUES["ensemble_peak_error_ratio_pct"],
        },
    }


# ---------------------------------------------------------------------------
# figure data files


def write_fig5_mae(path, backends: dict, dataset) -> None:
    """Per-row labels and predictions for the backend comparison figure."""
    feats = np.asarray(dataset.features, dtype=float)
    labels = np.asarray(dataset.labels, dtype=float)
    names = sorted(backends)
    preds = {n: np.asarray(backends[n].forward(feats), dtype=float) for n in names}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "label_w"] + [f"pred_{n}_w" for n in names] + [f"abs_err_{n}_w" for n in names])
        for i in range(labels.size):
            row = [i, repr(float(labels[i]))]
            row += [repr(float(preds[n][i])) for n in names]
            row += [repr(float(abs(preds[n][i] - labels[i]))) for n in names]
            writer.writerow(row)


def write_fig7_power(path, traces: list) -> None:
    """Long-format per-step demand and supply for every mission."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["complexity", "seed", "mode", "t", "p_load_w", "p_supplied_w", "soc_uc"])
        for tr in traces:
            supplied = tr.supplied
            for i in range(len(tr.times)):
                writer.writerow(
                    [tr.complexity, tr.seed, tr.mode, repr(float(tr.times[i])),
                     repr(float(tr.demand[i])), repr(float(supplied[i])), repr(float(tr.soc[i][2]))]
                )


def write_durations(path, traces: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["complexity", "seed", "mode", "outcome", "duration_s", "precharge_s", "total_s"])
        for tr in traces:
            writer.writerow(
                [tr.complexity, tr.seed, tr.mode, tr.outcome, repr(float(tr.duration_s)),
                 repr(float(tr.precharge_s)), repr(float(tr.duration_s + tr.precharge_s))]
            )
