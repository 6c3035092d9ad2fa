"""Empirical welfare criteria and treated-share estimates.

All objectives are inverse-propensity weighted sample means.  The building
block is the per-observation, per-stage contribution

    c_it = gamma_t * Y_it / prod_{s<=t} e_s(D_is, H_is)

which counts toward a DTR's welfare only while the DTR agrees with every
observed treatment up to stage ``t``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import PanelDataset
from .policy import Dtr, StageRule
from .propensity import PropensityModel

__all__ = [
    "WelfareWeights",
    "BudgetRow",
    "BudgetSpec",
    "EmptyPathWarning",
    "ShareReport",
    "WelfareReport",
    "ipw_contributions",
    "match_matrix",
    "empirical_welfare",
    "backward_objective",
    "empirical_treated_share",
    "treated_shares",
    "budget_lhs",
    "budget_feasible",
    "welfare_report",
]


class EmptyPathWarning(RuntimeWarning):
    """No observation follows the DTR up to the stage whose share is requested."""


@dataclass(frozen=True)
class WelfareWeights:
    """Stage weights ``gamma_1..gamma_T`` in ``[0, 1]``."""

    gamma: tuple

    def __post_init__(self):
        g = tuple(float(v) for v in self.gamma)
        if not g:
            raise ValueError("gamma must have at least one entry")
        if any(not 0.0 <= v <= 1.0 for v in g):
            raise ValueError(f"gamma entries must lie in [0, 1], got {g}")
        object.__setattr__(self, "gamma", g)

    def __len__(self) -> int:
        return len(self.gamma)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.gamma)


@dataclass(frozen=True)
class BudgetRow:
    """One constraint ``sum_t K_t * share_t <= C``."""

    K: tuple
    C: float

    def __post_init__(self):
        K = tuple(float(v) for v in self.K)
        if any(not 0.0 <= v <= 1.0 for v in K):
            raise ValueError("budget weights K must lie in [0, 1]")
        if abs(sum(K) - 1.0) > 1e-9:
            raise ValueError(f"budget weights K must sum to 1, got {sum(K)}")
        if self.C < 0:
            raise ValueError("budget level C must be non-negative")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "C", float(self.C))


@dataclass(frozen=True)
class BudgetSpec:
    """Budget rows plus the empirical slack ``alpha``.

    ``alpha=None`` means "use the default threshold for the sample size"; it
    is resolved by the estimator that consumes the budget.
    """

    rows: tuple
    alpha: Optional[float] = None

    def __post_init__(self):
        rows = tuple(self.rows)
        if not rows:
            raise ValueError("a budget spec needs at least one row")
        T = len(rows[0].K)
        if any(len(r.K) != T for r in rows):
            raise ValueError("all budget rows must cover the same number of stages")
        if self.alpha is not None and self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        object.__setattr__(self, "rows", rows)

    @property
    def B(self) -> int:
        return len(self.rows)

    def with_alpha(self, alpha: float) -> "BudgetSpec":
        return BudgetSpec(self.rows, float(alpha))


# core arrays ----------------------------------------------------------------------


def ipw_contributions(ds: PanelDataset, pm: PropensityModel, w: WelfareWeights) -> np.ndarray:
    """``c_it = gamma_t Y_it / prod_{s<=t} e_s`` with shape (n, T)."""
    if len(w) != ds.stage_count:
        raise ValueError(f"gamma has {len(w)} entries, data has {ds.stage_count} stages")
    e = pm.probabilities(ds)
    return w.as_array()[None, :] * ds.outcomes / np.cumprod(e, axis=1)


def match_matrix(ds: PanelDataset, dtr: Dtr) -> np.ndarray:
    """``prod_{s<=t} 1{g_s(H_is) = D_is}`` for every (i, t)."""
    agree = dtr.assignments(ds) == ds.treatments
    return np.cumprod(agree, axis=1).astype(bool)


def empirical_welfare(ds: PanelDataset, dtr: Dtr, pm: PropensityModel, w: WelfareWeights) -> float:
    """Sample IPW welfare of ``dtr``.

    Examples
    --------
    >>> from dewm.data import PanelDataset
    >>> from dewm.policy import Dtr
    >>> from dewm.propensity import PropensityModel
    >>> ds = PanelDataset([[1], [0]], [[2.0], [4.0]], [np.zeros((2, 0))])
    >>> pm = PropensityModel.known(0.5, 1)
    >>> empirical_welfare(ds, Dtr.constant([1]), pm, WelfareWeights((1.0,)))
    2.0
    """
    c = ipw_contributions(ds, pm, w)
    M = match_matrix(ds, dtr)
    return float(np.sum(np.where(M, c, 0.0)) / ds.n)


def backward_objective(
    ds: PanelDataset,
    t: int,
    g_t: StageRule,
    future: Sequence[StageRule],
    pm: PropensityModel,
    w: WelfareWeights,
) -> float:
    """Stage-``t`` backward criterion given fitted rules for stages ``t+1..T``.

    Only stages ``t..T`` enter, and both the agreement product and the
    propensity product start at stage ``t``.
    """
    T = ds.stage_count
    future = list(future)
    if len(future) != T - t:
        raise ValueError(f"need future rules for stages {t + 1}..{T}, got {len(future)}")
    rules = [g_t] + future
    for s, r in enumerate(rules, start=t):
        if r.stage != s:
            raise ValueError(f"rule for stage {s} is tagged stage {r.stage}")
    e = pm.probabilities(ds)[:, t - 1 :]
    gamma = w.as_array()[t - 1 :]
    agree = np.column_stack(
        [r.assign(ds.history_matrix(s)) == ds.treatments[:, s - 1] for s, r in enumerate(rules, start=t)]
    )
    M = np.cumprod(agree, axis=1).astype(bool)
    c = gamma[None, :] * ds.outcomes[:, t - 1 :] / np.cumprod(e, axis=1)
    return float(np.sum(np.where(M, c, 0.0)) / ds.n)


# treated shares ---------------------------------------------------------------------


@dataclass
class ShareReport:
    """Per-stage conditional treated shares and the stages with an empty path."""

    shares: np.ndarray
    empty_stages: list = field(default_factory=list)

    @property
    def empty_path(self) -> bool:
        return bool(self.empty_stages)


def treated_shares(ds: PanelDataset, dtr: Dtr) -> ShareReport:
    """All stages' ``E_hat[g_t | D_s = g_s for s < t]`` in one pass.

    A stage whose conditioning path is empty gets share 0 and is listed in
    ``empty_stages``.
    """
    A = dtr.assignments(ds)
    agree = A == ds.treatments
    prefix = np.ones(ds.n, dtype=bool)
    shares = np.zeros(ds.stage_count)
    empty = []
    for t in range(ds.stage_count):
        den = int(prefix.sum())
        if den == 0:
            empty.append(t + 1)
        else:
            shares[t] = np.count_nonzero(prefix & (A[:, t] == 1)) / den
        prefix &= agree[:, t]
    return ShareReport(shares, empty)


def empirical_treated_share(ds: PanelDataset, dtr: Dtr, t: int) -> float:
    """Conditional treated share at stage ``t`` along the DTR-consistent path.

    Emits :class:`EmptyPathWarning` and returns 0 when no observation agrees
    with the DTR before stage ``t``.
    """
    rep = treated_shares(ds, dtr)
    if t in rep.empty_stages:
        warnings.warn(
            f"stage {t}: no observation follows the DTR through stage {t - 1}; share set to 0",
            EmptyPathWarning,
            stacklevel=2,
        )
    return float(rep.shares[t - 1])


def _lhs_from_shares(shares: np.ndarray, row: BudgetRow) -> float:
    return float(np.dot(row.K, shares))


def budget_lhs(ds: PanelDataset, dtr: Dtr, spec: BudgetSpec, b: int) -> float:
    """Left side ``sum_t K_tb E_hat_t`` of budget row ``b`` (1-based)."""
    if not 1 <= b <= spec.B:
        raise IndexError(f"budget row {b} out of range 1..{spec.B}")
    rep = treated_shares(ds, dtr)
    return _lhs_from_shares(rep.shares, spec.rows[b - 1])


def budget_feasible(
    ds: PanelDataset, dtr: Dtr, spec: BudgetSpec, alpha: Optional[float] = None, strict: bool = False
) -> bool:
    """Whether every row satisfies ``lhs <= C_b + alpha``.

    In ``strict`` mode a DTR whose conditioning path empties out at some stage
    is treated as infeasible instead of costing nothing there.
    """
    a = spec.alpha if alpha is None else alpha
    if a is None:
        raise ValueError("alpha is unresolved; pass it explicitly")
    rep = treated_shares(ds, dtr)
    if strict and rep.empty_path:
        return False
    return all(_lhs_from_shares(rep.shares, r) <= r.C + a for r in spec.rows)


# reports ------------------------------------------------------------------------------


@dataclass
class WelfareReport:
    welfare: float
    shares: list
    budget_lhs: list
    warnings: list

    def to_json(self) -> str:
        return json.dumps(
            {
                "welfare": self.welfare,
                "shares": self.shares,
                "budget_lhs": self.budget_lhs,
                "warnings": self.warnings,
            },
            indent=2,
            sort_keys=True,
        )


def welfare_report(
    ds: PanelDataset,
    dtr: Dtr,
    pm: PropensityModel,
    w: WelfareWeights,
    budget: Optional[BudgetSpec] = None,
) -> WelfareReport:
    rep = treated_shares(ds, dtr)
    lhs = [] if budget is None else [_lhs_from_shares(rep.shares, r) for r in budget.rows]
    notes = [f"empty-path at stage {t}" for t in rep.empty_stages]
    return WelfareReport(empirical_welfare(ds, dtr, pm, w), rep.shares.tolist(), lhs, notes)
