"""Linear models of outcomes on flow composition with clustered inference.

Panel rows are region-year observations. Each model regresses one outcome on
the three flow-per-edge measures (plus optional socioeconomic controls) with
year fixed effects, dropping the earliest year as reference. Coefficients
come from a QR solve; the covariance is the cluster-robust sandwich over
region score sums with the CR1 small-sample factor

    (G / (G - 1)) * ((N - 1) / (N - K))

and the joint flow test is an F statistic on (3, G - 1) degrees of freedom.
Stars use two-tailed p-values from t(G - 1). These conventions are recorded
in formatted output since reasonable software disagrees on them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np
import scipy.linalg
import scipy.stats

__all__ = [
    "PanelRow",
    "RegressionResult",
    "WaldTest",
    "FLOW_PARAMS",
    "fit_ols",
    "wald_flow_test",
    "format_model_table",
]

FLOW_PARAMS = ("gradient_per_edge", "harmonic_per_edge", "curl_per_edge")

DISPLAY_NAMES = {
    "const": "Constant",
    "gradient_per_edge": "Gradient flow per edge",
    "harmonic_per_edge": "Harmonic flow per edge",
    "curl_per_edge": "Curl flow per edge",
}

STAR_LEVELS = ((0.01, "***"), (0.05, "**"), (0.1, "*"))


@dataclass(frozen=True)
class PanelRow:
    """One region-year observation: outcome, flow measures, optional controls."""

    region: str
    year: int
    outcome: float | None
    gradient_per_edge: float
    harmonic_per_edge: float
    curl_per_edge: float
    controls: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class WaldTest:
    f_statistic: float
    df_num: int
    df_denom: int
    p_value: float


@dataclass(frozen=True)
class RegressionResult:
    param_names: tuple
    coefficients: np.ndarray
    covariance: np.ndarray
    std_errors: np.ndarray
    r_squared: float
    n_obs: int
    n_clusters: int
    flow_params: tuple = ()

    def coefficient(self, name: str) -> float:
        return float(self.coefficients[self.param_names.index(name)])

    def std_error(self, name: str) -> float:
        return float(self.std_errors[self.param_names.index(name)])


def _design_matrix(
    rows: Sequence[PanelRow],
    controls: Sequence[str],
    include_flows: bool,
    reference_year: int,
    years: Sequence[int],
):
    names = ["const"]
    columns = [np.ones(len(rows))]
    if include_flows:
        for name in FLOW_PARAMS:
            names.append(name)
            columns.append(np.array([getattr(r, name) for r in rows], dtype=float))
    for name in controls:
        names.append(name)
        columns.append(np.array([float(r.controls[name]) for r in rows]))
    for year in years:
        if year == reference_year:
            continue
        names.append(f"year_{year}")
        columns.append(np.array([1.0 if r.year == year else 0.0 for r in rows]))
    return tuple(names), np.column_stack(columns)


def _check_full_rank(X: np.ndarray, names: Sequence[str]) -> None:
    _, r_factor, pivots = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r_factor))
    if diag.size == 0 or diag[0] == 0.0:
        raise ValueError("design matrix is empty or all-zero")
    tol = max(X.shape) * np.finfo(float).eps * diag[0]
    rank = int(np.count_nonzero(diag > tol))
    if rank < X.shape[1]:
        collinear = [names[p] for p in pivots[rank:]]
        raise ValueError(f"design matrix is rank deficient; collinear columns: {collinear}")


def fit_ols(
    panel: Sequence[PanelRow],
    controls: Sequence[str] = (),
    include_flows: bool = True,
    cluster_key: Callable[[PanelRow], Hashable] | None = None,
    reference_year: int | None = None,
) -> RegressionResult:
    """OLS with year fixed effects and cluster-robust (CR1) covariance.

    Rows with a missing outcome or missing requested control are dropped
    listwise. Requires at least two clusters and a full-rank design.
    """
    key = cluster_key if cluster_key is not None else (lambda row: row.region)
    rows = [
        r
        for r in panel
        if r.outcome is not None and all(r.controls.get(c) is not None for c in controls)
    ]
    if not rows:
        raise ValueError("no rows with complete data to fit")
    y = np.array([float(r.outcome) for r in rows])
    n_obs = len(rows)

    cluster_ids = sorted({key(r) for r in rows}, key=repr)
    n_clusters = len(cluster_ids)
    if n_clusters < 2:
        raise ValueError(f"cluster-robust inference needs >= 2 clusters, got {n_clusters}")
    cluster_pos = {c: i for i, c in enumerate(cluster_ids)}
    codes = np.array([cluster_pos[key(r)] for r in rows])

    years = sorted({r.year for r in rows})
    ref_year = reference_year if reference_year is not None else years[0]
    if ref_year not in years:
        raise ValueError(f"reference year {ref_year} not present in the panel")

    names, X = _design_matrix(rows, controls, include_flows, ref_year, years)
    n_params = X.shape[1]
    if n_obs <= n_params:
        raise ValueError(f"need more observations ({n_obs}) than parameters ({n_params})")
    _check_full_rank(X, names)

    Q, R = np.linalg.qr(X)
    coefficients = scipy.linalg.solve_triangular(R, Q.T @ y)
    residuals = y - X @ coefficients

    ssr = float(residuals @ residuals)
    centered = y - y.mean()
    sst = float(centered @ centered)
    r_squared = 1.0 - ssr / sst if sst > 0 else (1.0 if ssr <= 1e-12 else 0.0)

    r_inv = scipy.linalg.solve_triangular(R, np.eye(n_params))
    bread = r_inv @ r_inv.T  # (X'X)^-1

    scores = X * residuals[:, None]
    cluster_scores = np.zeros((n_clusters, n_params))
    np.add.at(cluster_scores, codes, scores)
    meat = cluster_scores.T @ cluster_scores

    correction = (n_clusters / (n_clusters - 1)) * ((n_obs - 1) / (n_obs - n_params))
    covariance = correction * bread @ meat @ bread
    covariance = (covariance + covariance.T) * 0.5
    std_errors = np.sqrt(np.clip(np.diag(covariance), 0.0, None))

    return RegressionResult(
        param_names=names,
        coefficients=coefficients,
        covariance=covariance,
        std_errors=std_errors,
        r_squared=r_squared,
        n_obs=n_obs,
        n_clusters=n_clusters,
        flow_params=FLOW_PARAMS if include_flows else (),
    )


def wald_flow_test(result: RegressionResult) -> WaldTest:
    """Joint F test that all three flow coefficients are zero."""
    if len(result.flow_params) != 3:
        raise ValueError("result does not contain the three flow coefficients")
    idx = [result.param_names.index(p) for p in result.flow_params]
    b = result.coefficients[idx]
    V = result.covariance[np.ix_(idx, idx)]
    try:
        solved = scipy.linalg.cho_solve(scipy.linalg.cho_factor(V), b)
    except scipy.linalg.LinAlgError as err:
        raise ValueError(f"restricted covariance is singular: {err}") from err
    df_num = 3
    df_denom = result.n_clusters - 1
    f_statistic = float(b @ solved) / df_num
    p_value = float(scipy.stats.f.sf(f_statistic, df_num, df_denom))
    return WaldTest(f_statistic, df_num, df_denom, p_value)


def _stars(p: float) -> str:
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""


def _display(name: str) -> str:
    if name in DISPLAY_NAMES:
        return DISPLAY_NAMES[name]
    if name.startswith("year_"):
        return f"Year {name[5:]}"
    return name.replace("_", " ").capitalize()


def format_model_table(
    result: RegressionResult, wald: WaldTest | None = None, label: str = ""
) -> str:
    """Coefficient table with clustered SEs in parentheses and stars.

    Year dummies collapse to a single "Year fixed effects: Yes" line; the
    Wald block and the inference conventions are appended as footer lines.
    """
    df = result.n_clusters - 1
    lines = []
    if label:
        lines.append(f"DV: {label}")
    lines.append("-" * 48)
    ordered = [n for n in result.param_names if not n.startswith("year_") and n != "const"]
    ordered.append("const")
    for name in ordered:
        estimate = result.coefficient(name)
        se = result.std_error(name)
        t = estimate / se if se > 0 else np.inf
        p = 2.0 * float(scipy.stats.t.sf(abs(t), df))
        lines.append(f"{_display(name):<34}{estimate:>12.2f}{_stars(p)}")
        lines.append(f"{'':<34}{f'({se:.2f})':>12}")
    lines.append("-" * 48)
    has_year_fe = any(n.startswith("year_") for n in result.param_names)
    lines.append(f"{'Year fixed effects':<34}{'Yes' if has_year_fe else 'No':>12}")
    lines.append(f"{'N':<34}{result.n_obs:>12}")
    lines.append(f"{'R2':<34}{result.r_squared:>12.2f}")
    if wald is not None:
        lines.append("Wald test for flow predictors")
        lines.append(f"{'F':<34}{wald.f_statistic:>12.2f}")
        lines.append(f"{'d.f.':<34}{wald.df_num:>12.2f}")
        lines.append(f"{'p-value':<34}{wald.p_value:>12.2f}")
    else:
        lines.append("Wald block omitted: model has no flow predictors")
    lines.append("-" * 48)
    lines.append(
        "Notes: robust standard errors clustered on region (CR1); "
        "stars two-tailed on t(G-1): * p<0.1, ** p<0.05, *** p<0.01."
    )
    return "\n".join(lines) + "\n"
