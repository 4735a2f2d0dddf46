"""Conditioning fidelity: how well generated graphs reproduce the requested features."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .dataset import GraphSample, NormalizationParams
from .stats import FEATURE_NAMES, conditioning_vector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class R2Report:
    per_feature: dict[str, float]
    aggregate: float
    n_used: int
    n_empty: int
    scatter: np.ndarray  # [n_used, 7, 2] (requested, measured) in normalized units

    def rows(self) -> list[tuple[str, float]]:
        return list(self.per_feature.items()) + [("aggregate", self.aggregate)]


def r2_score(target: np.ndarray, pred: np.ndarray) -> np.ndarray:
    """Column-wise coefficient of determination (nan for constant targets)."""
    target, pred = np.asarray(target, float), np.asarray(pred, float)
    ss_res = np.sum((target - pred) ** 2, axis=0)
    ss_tot = np.sum((target - target.mean(axis=0)) ** 2, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ss_tot > 0, 1.0 - ss_res / ss_tot, np.nan)


def conditioning_r2(requested: np.ndarray, generated: list[GraphSample],
                    scaling: NormalizationParams) -> R2Report:
    """R^2 in normalized feature space; graphs without edges are counted and skipped."""
    requested = np.atleast_2d(requested)
    ok = [i for i, s in enumerate(generated) if s.graph.n_edges > 0]
    n_empty = len(generated) - len(ok)
    if n_empty:
        log.warning("%d of %d generated graphs are empty and excluded", n_empty, len(generated))
    if len(ok) < 2:
        nan = {n: float("nan") for n in FEATURE_NAMES}
        return R2Report(nan, float("nan"), len(ok), n_empty, np.zeros((0, len(FEATURE_NAMES), 2)))
    got = np.stack([scaling.normalize_features(conditioning_vector(generated[i].graph)) for i in ok])
    r2 = r2_score(requested[ok], got)
    return R2Report(dict(zip(FEATURE_NAMES, map(float, r2))), float(np.nanmean(r2)), len(ok), n_empty,
                    np.stack([requested[ok], got], axis=-1))


def evaluate(model, samples: list[GraphSample], scaling: NormalizationParams, rng=None) -> R2Report:
    """Generate one graph per test sample from its own features and score the match."""
    rng = np.random.default_rng(0) if rng is None else rng
    conds = np.stack([scaling.normalize_features(s.features) for s in samples])
    return conditioning_r2(conds, model.sample(conds, rng), scaling)


def write_report(report: R2Report, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature", "r2"])
        for name, v in report.rows():
            w.writerow([name, f"{v:.6f}"])
        w.writerow(["n_used", report.n_used])
        w.writerow(["n_empty", report.n_empty])
