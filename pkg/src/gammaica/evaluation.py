"""Recovery metrics: matched mean absolute correlation and the linear
identifiability regression check.

Both are computed against the clean sources (outlier-free ground truth).
The matching is an exact maximum-weight assignment on the |Pearson|
matrix, so the metric is invariant to permutation, sign flips, and
per-component rescaling of the estimates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ShapeError


@dataclass
class EvalReport:
    corr_matrix: np.ndarray            # (d, d) absolute Pearson correlations
    assignment: np.ndarray             # estimate i <-> truth assignment[i]
    mean_matched_corr: float
    r2_per_component: np.ndarray | None = None
    mean_r2: float | None = None
    extras: dict = field(default_factory=dict)

    def to_document(self) -> dict:
        doc = {
            "corr_matrix": self.corr_matrix.tolist(),
            "assignment": self.assignment.tolist(),
            "mean_matched_corr": self.mean_matched_corr,
        }
        if self.r2_per_component is not None:
            doc["r2_per_component"] = self.r2_per_component.tolist()
            doc["mean_r2"] = self.mean_r2
        doc.update(self.extras)
        return doc


def abs_correlation_matrix(estimates: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """|Pearson| between every estimate column and every truth column.
    Zero-variance columns yield 0 entries with a warning."""
    est = np.asarray(estimates, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.shape != tru.shape or est.ndim != 2:
        raise ShapeError(f"estimates {est.shape} and truth {tru.shape} must match")
    ec = est - est.mean(axis=0)
    tc = tru - tru.mean(axis=0)
    es = np.sqrt((ec ** 2).sum(axis=0))
    ts = np.sqrt((tc ** 2).sum(axis=0))
    # relative threshold: constant columns cancel to ~1e-16 residuals
    bad_e = es <= 1e-10 * np.maximum(np.sqrt((est ** 2).sum(axis=0)), 1e-300)
    bad_t = ts <= 1e-10 * np.maximum(np.sqrt((tru ** 2).sum(axis=0)), 1e-300)
    if bad_e.any() or bad_t.any():
        warnings.warn("zero-variance column(s); their correlations are set to 0")
    es = np.where(bad_e, 1.0, es)
    ts = np.where(bad_t, 1.0, ts)
    corr = np.abs((ec / es).T @ (tc / ts))
    corr[bad_e, :] = 0.0
    corr[:, bad_t] = 0.0
    return np.clip(corr, 0.0, 1.0)


def matched_mean_abs_corr(estimates: np.ndarray, truth: np.ndarray) -> EvalReport:
    """Maximum-weight one-to-one matching of |corr| between estimated and
    true components; reports the mean over matched pairs."""
    corr = abs_correlation_matrix(estimates, truth)
    rows, cols = linear_sum_assignment(corr, maximize=True)
    assignment = np.empty_like(cols)
    assignment[rows] = cols
    mean_matched = float(corr[rows, cols].mean())
    return EvalReport(corr, assignment, mean_matched)


def linear_identifiability_r2(features: np.ndarray, transformed_truth: np.ndarray):
    """OLS of each true component function q_j(s_j) on [features, 1].

    Returns (per-component R^2, mean R^2).  A perfect linear relation
    q(s) = A h(x) + alpha gives R^2 = 1 for every component.
    """
    h = np.asarray(features, dtype=np.float64)
    q = np.asarray(transformed_truth, dtype=np.float64)
    if h.shape[0] != q.shape[0]:
        raise ShapeError("features and truth need equal sample counts")
    n = h.shape[0]
    design = np.concatenate([h, np.ones((n, 1))], axis=1)
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        warnings.warn(f"rank-deficient design ({rank} < {design.shape[1]}); using pseudo-inverse")
    coef, _, _, _ = np.linalg.lstsq(design, q, rcond=None)
    resid = q - design @ coef
    ss_res = (resid ** 2).sum(axis=0)
    qc = q - q.mean(axis=0)
    ss_tot = (qc ** 2).sum(axis=0)
    ss_tot = np.where(ss_tot == 0.0, 1.0, ss_tot)
    r2 = 1.0 - ss_res / ss_tot
    return r2, float(r2.mean())


def evaluate_run(
    estimates: np.ndarray,
    truth: np.ndarray,
    features: np.ndarray | None = None,
    transformed_truth: np.ndarray | None = None,
) -> EvalReport:
    """Matched |corr| of `estimates` vs `truth`, plus the identifiability
    R^2 of `features` against `transformed_truth` when given."""
    report = matched_mean_abs_corr(estimates, truth)
    if features is not None and transformed_truth is not None:
        r2, mean_r2 = linear_identifiability_r2(features, transformed_truth)
        report.r2_per_component = r2
        report.mean_r2 = mean_r2
    return report
