"""Backward DEWM, Simultaneous DEWM (optionally budget-constrained) and Q-learning.

All DEWM fits reduce to repeated weighted classification at a single stage:
with every other stage held fixed, the empirical criterion equals

    const + (1/n) sum_i w_i g_t(H_it),    w_i = m_i (2 D_it - 1),

where ``m_i`` is observation ``i``'s inverse-propensity-weighted outcome mass
that depends on agreeing with ``D_it``.  :mod:`dewm.search` solves each such
problem exactly.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .data import PanelDataset, demean_outcomes
from .policy import (
    Constants,
    Dtr,
    Intertemporal,
    LinearClass,
    PolicyClassSpec,
    StageRule,
    dtr_to_raw_outcomes,
    dumps_dtr,
    pairwise_allowed,
)
from .propensity import PropensityModel
from .search import (
    DEFAULT_MAX_SUBSETS,
    CandidateSet,
    EnumeratedCandidates,
    best_index,
    enumerate_candidates,
    tie_tolerance,
)
from .welfare import BudgetSpec, WelfareWeights, empirical_welfare, treated_shares

__all__ = [
    "EstimationConfig",
    "FitResult",
    "EstimationError",
    "default_alpha",
    "fit_backward",
    "fit_simultaneous",
    "fit_simultaneous_budget",
    "fit_qlearning",
    "fit",
]


class EstimationError(RuntimeError):
    """No feasible rule or DTR exists, or a regression design is singular."""


def default_alpha(B: int, delta: float, n: int) -> float:
    """Budget slack ``sqrt(log(6 B / delta) / (2 n))``.

    >>> round(default_alpha(1, 0.05, 200), 5)
    0.1094
    """
    if B < 1 or n < 1 or not 0.0 < delta < 1.0:
        raise ValueError("need B >= 1, n >= 1 and delta in (0, 1)")
    return math.sqrt(math.log(6.0 * B / delta) / (2.0 * n))


@dataclass
class EstimationConfig:
    """Everything an estimator needs besides data and propensities.

    Attributes
    ----------
    weights : WelfareWeights
    class_spec : PolicyClassSpec
    budget : BudgetSpec, optional
        Only used by :func:`fit_simultaneous_budget`.
    delta : float
        Confidence level for the default budget slack.
    restarts, max_sweeps, tolerance : coordinate-ascent controls.
    exhaustive_cap : int
        Use exhaustive search when the product of per-stage candidate counts
        is at most this.
    seed : int
    max_subsets : int
        Budget for general hyperplane enumeration.
    strict_empty_path : bool
        Treat a DTR whose consistent path empties out as budget-infeasible.
    warm_start : bool
        Seed the first coordinate-ascent restart with the backward solution.
    """

    weights: WelfareWeights
    class_spec: PolicyClassSpec
    budget: Optional[BudgetSpec] = None
    delta: float = 0.05
    restarts: int = 20
    max_sweeps: int = 50
    tolerance: float = 1e-12
    exhaustive_cap: int = 10**6
    seed: int = 0
    max_subsets: int = DEFAULT_MAX_SUBSETS
    strict_empty_path: bool = False
    warm_start: bool = True

    def __post_init__(self):
        if self.restarts < 1 or self.max_sweeps < 1:
            raise ValueError("restarts and max_sweeps must be at least 1")
        if self.tolerance < 0:
            raise ValueError("tolerance must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if len(self.weights) != self.class_spec.stage_count:
            raise ValueError("gamma and policy class must cover the same number of stages")


@dataclass
class FitResult:
    """Outcome of one estimator run.

    ``dtr`` reads the histories of the data it was fitted on; when that data
    was demeaned, ``raw_dtr`` is the same regime rewritten for raw outcomes.
    ``welfare`` is the empirical criterion of ``dtr`` on the fitting data.
    """

    method: str
    dtr: Dtr
    welfare: float
    shares: list
    budget_lhs: list = field(default_factory=list)
    alpha: Optional[float] = None
    warnings: list = field(default_factory=list)
    sweeps: int = 0
    strategy: str = ""
    raw_dtr: Optional[Dtr] = None
    outcome_means: Optional[list] = None
    trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.raw_dtr is None:
            self.raw_dtr = self.dtr

    def metrics(self) -> dict:
        return {
            "method": self.method,
            "strategy": self.strategy,
            "welfare": self.welfare,
            "shares": [float(s) for s in self.shares],
            "budget_lhs": [float(v) for v in self.budget_lhs],
            "alpha": self.alpha,
            "sweeps": self.sweeps,
            "warnings": list(self.warnings),
            "outcome_means": self.outcome_means,
        }

    def dumps(self) -> str:
        """Key-value DTR text (raw-outcome coordinates) plus a JSON metrics line."""
        return dumps_dtr(self.raw_dtr) + "metrics = " + json.dumps(self.metrics(), sort_keys=True) + "\n"


# shared problem state ------------------------------------------------------------------


class _Problem:
    """Arrays and candidate sets shared by the DEWM fits."""

    def __init__(self, ds: PanelDataset, pm: PropensityModel, cfg: EstimationConfig):
        if cfg.class_spec.stage_count != ds.stage_count:
            raise ValueError(
                f"policy class has {cfg.class_spec.stage_count} stages, data has {ds.stage_count}"
            )
        self.ds, self.pm, self.cfg = ds, pm, cfg
        self.n, self.T = ds.n, ds.stage_count
        self.D = ds.treatments.astype(np.int8)
        self.sgn = 2.0 * self.D - 1.0
        self.e = pm.probabilities(ds)
        self.gamma = cfg.weights.as_array()
        self.Y = ds.outcomes
        self.c = self.gamma[None, :] * self.Y / np.cumprod(self.e, axis=1)
        self.kind = cfg.class_spec.intertemporal
        self.cands: list[CandidateSet] = []
        for t in range(1, self.T + 1):
            cls = cfg.class_spec[t]
            if isinstance(cls, LinearClass):
                X = ds.history_matrix(t)
                if cls.selector and max(cls.selector) >= X.shape[1]:
                    raise ValueError(
                        f"stage {t} selector index {max(cls.selector)} exceeds history length {X.shape[1]}"
                    )
                X = X[:, list(cls.selector)]
            else:
                X = np.zeros((self.n, 0))
            self.cands.append(enumerate_candidates(X, cls, stage=t, max_subsets=cfg.max_subsets))
        self._assign: dict = {}
        self.warnings: list[str] = []

    def admissible(self, t: int) -> np.ndarray:
        cs = self.cands[t - 1]
        if isinstance(cs, EnumeratedCandidates):
            return cs.admissible_mask()
        return np.ones(len(cs), bool)

    def assignment(self, t: int, k: int) -> np.ndarray:
        key = (t, k)
        a = self._assign.get(key)
        if a is None:
            a = self.cands[t - 1].assignment(k).astype(np.int8)
            self._assign[key] = a
        return a

    def dtr(self, state) -> Dtr:
        return Dtr(tuple(self.cands[t - 1].rule(k) for t, k in enumerate(state, start=1)))

    # intertemporal filters ------------------------------------------------------------
    def forced_mask(self, t: int, others: dict) -> np.ndarray:
        """Candidates at stage ``t`` compatible with the given other-stage treatments.

        ``others`` maps stage ``s != t`` to a 0/1 vector (observed treatments
        or the regime's own outputs).
        """
        cs = self.cands[t - 1]
        mask = self.admissible(t)
        if self.kind is Intertemporal.NONE or not others:
            return mask
        ok0 = np.ones(self.n, bool)
        ok1 = np.ones(self.n, bool)
        for s, v in others.items():
            if s < t:
                ok0 &= pairwise_allowed(self.kind, v, 0)
                ok1 &= pairwise_allowed(self.kind, v, 1)
            else:
                ok0 &= pairwise_allowed(self.kind, 0, v)
                ok1 &= pairwise_allowed(self.kind, 1, v)
        clash = ~ok0 & ~ok1
        if clash.any():
            self.warnings.append(
                f"stage {t}: {int(clash.sum())} observations admit neither treatment under "
                f"the {self.kind.value} restriction and are left unconstrained"
            )
        need1 = (~ok0 & ok1).astype(float)
        need0 = (ok0 & ~ok1).astype(float)
        if need1.any():
            mask &= cs.totals(need1) > need1.sum() - 0.5
        if need0.any():
            mask &= cs.totals(need0) < 0.5
        return mask

    # simultaneous pieces ------------------------------------------------------------------
    def state_matrix(self, state) -> np.ndarray:
        return np.column_stack([self.assignment(t, k) for t, k in enumerate(state, start=1)])

    def welfare_of(self, G: np.ndarray) -> float:
        M = np.cumprod(G == self.D, axis=1).astype(bool)
        return float(np.sum(np.where(M, self.c, 0.0)) / self.n)

    def stage_problem(self, G: np.ndarray, t: int):
        """Weights and constant of the stage-``t`` step with other stages in ``G``."""
        agree = (G == self.D).astype(float)
        j = t - 1
        prefix = np.prod(agree[:, :j], axis=1) if j else np.ones(self.n)
        tail = np.cumprod(agree[:, j + 1 :], axis=1)
        m = self.c[:, j] + np.sum(self.c[:, j + 1 :] * tail, axis=1)
        m = prefix * m
        w = m * self.sgn[:, j]
        const = float(np.sum(m * (1 - self.D[:, j])))
        if j:
            M = np.cumprod(agree[:, :j], axis=1)
            const += float(np.sum(self.c[:, :j] * M))
        return w, const / self.n

    def budget_mask(self, G: np.ndarray, t: int, budget: BudgetSpec, alpha: float, strict: bool):
        """Candidates at stage ``t`` keeping every budget row within ``C + alpha``."""
        cs = self.cands[t - 1]
        agree = (G == self.D).astype(float)
        j = t - 1
        K = np.array([r.K for r in budget.rows])  # (B, T)
        lhs = np.zeros((len(budget.rows), len(cs)))
        empty = np.zeros(len(cs), bool)
        prefix = np.prod(agree[:, :j], axis=1) if j else np.ones(self.n)
        # stages before t do not depend on g_t
        pre = np.ones(self.n)
        for s in range(j):
            den = pre.sum()
            if den > 0:
                lhs += K[:, [s]] * (np.sum(pre * G[:, s]) / den)
            else:
                empty[:] = True
            pre = pre * agree[:, s]
        # stage t itself
        den = prefix.sum()
        if den > 0:
            lhs += K[:, [j]] * (cs.totals(prefix) / den)[None, :]
        else:
            empty[:] = True
        # later stages: the path passes through 1{D_t = g_t}
        run = prefix.copy()
        for s in range(j + 1, self.T):
            if s > j + 1:
                run = run * agree[:, s - 1]
            a = run * G[:, s]
            num = np.sum(a * (1 - self.D[:, j])) + cs.totals(a * self.sgn[:, j])
            dsum = np.sum(run * (1 - self.D[:, j])) + cs.totals(run * self.sgn[:, j])
            pos = dsum > 0.5
            share = np.where(pos, num / np.where(pos, dsum, 1.0), 0.0)
            empty |= ~pos
            lhs += K[:, [s]] * share[None, :]
        C = np.array([r.C for r in budget.rows])[:, None]
        ok = np.all(lhs <= C + alpha, axis=0)
        if strict:
            ok &= ~empty
        return ok


def _other_outputs(G: np.ndarray, t: int) -> dict:
    return {s: G[:, s - 1] for s in range(1, G.shape[1] + 1) if s != t}


def _observed_others(D: np.ndarray, t: int) -> dict:
    return {s: D[:, s - 1] for s in range(1, D.shape[1] + 1) if s != t}


def _finish(method, prob: _Problem, dtr: Dtr, budget=None, alpha=None, **kw) -> FitResult:
    ds = prob.ds
    rep = treated_shares(ds, dtr)
    lhs = [] if budget is None else [float(np.dot(r.K, rep.shares)) for r in budget.rows]
    notes = list(dict.fromkeys(prob.warnings))
    notes += [f"empty-path at stage {t}" for t in rep.empty_stages]
    raw = None
    means = None
    if ds.demeaned and ds.outcome_means is not None:
        means = [float(v) for v in ds.outcome_means]
        raw = dtr_to_raw_outcomes(dtr, means)
    return FitResult(
        method=method,
        dtr=dtr,
        welfare=empirical_welfare(ds, dtr, prob.pm, prob.cfg.weights),
        shares=rep.shares.tolist(),
        budget_lhs=lhs,
        alpha=alpha,
        warnings=notes,
        raw_dtr=raw,
        outcome_means=means,
        **kw,
    )


# backward -----------------------------------------------------------------------------------


def _backward_state(prob: _Problem) -> list:
    n, T = prob.n, prob.T
    state = [0] * T
    future_agree = np.ones((n, 0))
    for t in range(T, 0, -1):
        j = t - 1
        # propensity products restart at stage t
        e_cum = np.cumprod(prob.e[:, j:], axis=1)
        c_t = prob.gamma[None, j:] * prob.Y[:, j:] / e_cum
        if future_agree.shape[1]:
            tail = np.cumprod(future_agree, axis=1)
            m = c_t[:, 0] + np.sum(c_t[:, 1:] * tail, axis=1)
        else:
            m = c_t[:, 0]
        w = m * prob.sgn[:, j]
        mask = prob.forced_mask(t, _observed_others(prob.D, t))
        vals = prob.cands[j].totals(w)
        k = best_index(vals, mask, tie_tolerance(w))
        if k < 0:
            raise EstimationError(f"backward step at stage {t}: no feasible candidate rule")
        state[j] = k
        a = prob.assignment(t, k)
        future_agree = np.column_stack([(a == prob.D[:, j]).astype(float), future_agree])
    return state


def fit_backward(ds: PanelDataset, pm: PropensityModel, cfg: EstimationConfig) -> FitResult:
    """Backward DEWM: fit ``g_T`` first, then each earlier stage given the later fits.

    Intertemporal restrictions are imposed against the observed treatments of
    the other stages.
    """
    if cfg.budget is not None:
        raise ValueError("budget constraints apply to the simultaneous method only")
    prob = _Problem(ds, pm, cfg)
    state = _backward_state(prob)
    return _finish("backward", prob, prob.dtr(state), strategy="backward", sweeps=1)


# simultaneous --------------------------------------------------------------------------------


class _Simultaneous:
    def __init__(self, prob: _Problem, budget: Optional[BudgetSpec], alpha: Optional[float]):
        self.p = prob
        self.budget = budget
        self.alpha = alpha
        self.strict = prob.cfg.strict_empty_path
        self._memo: dict = {}

    def step(self, state, t):
        """Exact best stage-``t`` candidate with the rest of ``state`` fixed."""
        key = (tuple(state), t)
        hit = self._memo.get(key)
        if hit is not None:
            return hit
        p = self.p
        G = p.state_matrix(state)
        w, const = p.stage_problem(G, t)
        mask = p.forced_mask(t, _other_outputs(G, t))
        if self.budget is not None:
            mask &= p.budget_mask(G, t, self.budget, self.alpha, self.strict)
        vals = p.cands[t - 1].totals(w)
        k = best_index(vals, mask, tie_tolerance(w))
        out = (k, const + (vals[k] / p.n if k >= 0 else -np.inf))
        self._memo[key] = out
        return out

    def feasible(self, state) -> bool:
        p = self.p
        G = p.state_matrix(state)
        if p.kind is not Intertemporal.NONE:
            for t in range(2, p.T + 1):
                for s in range(1, t):
                    if not np.all(pairwise_allowed(p.kind, G[:, s - 1], G[:, t - 1])):
                        return False
        if self.budget is not None:
            rep = _shares_from(G, p.D)
            if self.strict and rep[1]:
                return False
            for r in self.budget.rows:
                if float(np.dot(r.K, rep[0])) > r.C + self.alpha:
                    return False
        return True

    # strategy A --------------------------------------------------------------------------
    def exhaustive(self):
        p = self.p
        best, best_val = None, -np.inf
        ranges = [range(len(c)) for c in p.cands[:-1]]
        adm = [p.admissible(t) for t in range(1, p.T)]
        for prefix in itertools.product(*ranges):
            if any(not adm[t][k] for t, k in enumerate(prefix)):
                continue
            state = list(prefix) + [0]
            if not self._prefix_ok(state):
                continue
            k, v = self.step(state, p.T)
            if k < 0:
                continue
            state[-1] = k
            if v > best_val + 1e-12 * (abs(best_val) + 1.0) or best is None:
                best, best_val = state, v
        return best

    def _prefix_ok(self, state) -> bool:
        p = self.p
        if p.kind is Intertemporal.NONE or p.T < 3:
            return True
        G = p.state_matrix(state)
        for t in range(2, p.T):
            for s in range(1, t):
                if not np.all(pairwise_allowed(p.kind, G[:, s - 1], G[:, t - 1])):
                    return False
        return True

    # strategy B --------------------------------------------------------------------------
    def random_state(self, rng):
        p = self.p
        state = []
        for t in range(1, p.T + 1):
            mask = p.admissible(t)
            if p.kind is not Intertemporal.NONE and state:
                G = p.state_matrix(state)
                mask = mask & p.forced_mask(t, {s: G[:, s - 1] for s in range(1, t)})
            idx = np.flatnonzero(mask)
            if len(idx) == 0:
                return None
            state.append(int(idx[rng.integers(len(idx))]))
        return state

    def initial_state(self, rng, warm=None):
        if warm is not None and self.feasible(warm):
            return list(warm)
        for _ in range(50):
            s = self.random_state(rng)
            if s is not None and self.feasible(s):
                return s
        zero = [0] * self.p.T
        if all(self.p.admissible(t)[0] for t in range(1, self.p.T + 1)) and self.feasible(zero):
            return zero
        return None

    def ascend(self, state, max_sweeps, tol):
        p = self.p
        value = p.welfare_of(p.state_matrix(state))
        trace = [value]
        sweeps = 0
        for sweeps in range(1, max_sweeps + 1):
            start = value
            for t in range(1, p.T + 1):
                k, v = self.step(state, t)
                if k >= 0 and k != state[t - 1] and v > value + tol:
                    state = list(state)
                    state[t - 1] = k
                    value = p.welfare_of(p.state_matrix(state))
                    if value < trace[-1] - 1e-9 * (abs(trace[-1]) + 1.0):
                        raise AssertionError("coordinate ascent decreased the objective")
                    trace.append(value)
            if value - start <= tol:
                break
        return state, value, sweeps, trace


def _shares_from(G: np.ndarray, D: np.ndarray):
    n, T = G.shape
    prefix = np.ones(n, bool)
    shares = np.zeros(T)
    empty = False
    for t in range(T):
        den = prefix.sum()
        if den == 0:
            empty = True
        else:
            shares[t] = np.count_nonzero(prefix & (G[:, t] == 1)) / den
        prefix &= G[:, t] == D[:, t]
    return shares, empty


def _solve_simultaneous(prob: _Problem, budget, alpha):
    cfg = prob.cfg
    sim = _Simultaneous(prob, budget, alpha)
    size = math.prod(len(c) for c in prob.cands)
    if size <= cfg.exhaustive_cap:
        state = sim.exhaustive()
        if state is None:
            raise EstimationError("no DTR in the policy class satisfies the constraints")
        return state, "exhaustive", 1, []
    rng = np.random.default_rng(cfg.seed)
    warm = None
    if cfg.warm_start and budget is None:
        try:
            warm = _backward_state(prob)
        except EstimationError:
            warm = None
    best, best_val, total_sweeps, best_trace = None, -np.inf, 0, []
    tol = cfg.tolerance
    for r in range(cfg.restarts):
        init = sim.initial_state(rng, warm if r == 0 else None)
        if init is None:
            continue
        state, value, sweeps, trace = sim.ascend(init, cfg.max_sweeps, tol)
        total_sweeps += sweeps
        if best is None or value > best_val + 1e-12 * (abs(best_val) + 1.0):
            best, best_val, best_trace = state, value, trace
    if best is None:
        raise EstimationError("no feasible starting DTR found for coordinate ascent")
    return best, "coordinate-ascent", total_sweeps, best_trace


def fit_simultaneous(ds: PanelDataset, pm: PropensityModel, cfg: EstimationConfig) -> FitResult:
    """Simultaneous DEWM: maximise the full empirical welfare over the class product.

    Exhaustive when the product of candidate counts is at most
    ``cfg.exhaustive_cap`` (every prefix of stages ``1..T-1`` is paired with
    its exact best final-stage rule), otherwise multi-start exact coordinate
    ascent.  Intertemporal restrictions apply to the regime's own outputs.
    """
    if cfg.budget is not None:
        raise ValueError("config carries a budget; use fit_simultaneous_budget")
    prob = _Problem(ds, pm, cfg)
    state, strategy, sweeps, trace = _solve_simultaneous(prob, None, None)
    return _finish("simultaneous", prob, prob.dtr(state), strategy=strategy, sweeps=sweeps, trace=trace)


def fit_simultaneous_budget(ds: PanelDataset, pm: PropensityModel, cfg: EstimationConfig) -> FitResult:
    """Simultaneous DEWM subject to ``sum_t K_tb E_hat_t <= C_b + alpha`` for every row.

    ``alpha`` comes from the budget spec or, when unset, from
    :func:`default_alpha` with the configured ``delta``.
    """
    if cfg.budget is None:
        raise ValueError("fit_simultaneous_budget needs cfg.budget")
    if len(cfg.budget.rows[0].K) != ds.stage_count:
        raise ValueError("budget rows must have one weight per stage")
    alpha = cfg.budget.alpha
    if alpha is None:
        alpha = default_alpha(cfg.budget.B, cfg.delta, ds.n)
    prob = _Problem(ds, pm, cfg)
    state, strategy, sweeps, trace = _solve_simultaneous(prob, cfg.budget, alpha)
    res = _finish(
        "simultaneous-budget", prob, prob.dtr(state), budget=cfg.budget, alpha=alpha,
        strategy=strategy, sweeps=sweeps, trace=trace,
    )
    for r, v in zip(cfg.budget.rows, res.budget_lhs):
        if v > r.C + alpha + 1e-12:
            raise AssertionError(f"budget row violated: {v} > {r.C} + {alpha}")
    return res


# Q-learning ------------------------------------------------------------------------------------


def _ols(X: np.ndarray, y: np.ndarray, what: str) -> np.ndarray:
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise EstimationError(f"{what}: design matrix is rank deficient")
    return np.linalg.lstsq(X, y, rcond=None)[0]


def fit_qlearning(ds: PanelDataset, cfg: EstimationConfig, pm: Optional[PropensityModel] = None) -> FitResult:
    """Two-stage linear Q-learning baseline.

    Stage 2 regresses ``Y_2`` on ``(1, Y_1, D_2, D_2 D_1, D_2 Y_1)`` and treats
    when the fitted contrast is non-negative.  Stage 1 regresses the
    pseudo-outcome ``a_0 + a_1 Y_1 + max(0, contrast)`` on
    ``(1, X_1, D_1, D_1 X_1)``.  Only ``gamma = (0, 1)`` is supported.

    ``pm`` is used solely to report the IPW welfare of the fitted regime.
    """
    if ds.stage_count != 2:
        raise ValueError("Q-learning baseline is defined for two stages only")
    if tuple(cfg.weights.gamma) != (0.0, 1.0):
        raise ValueError("Q-learning baseline supports gamma = (0, 1) only")
    n = ds.n
    D1 = ds.treatments[:, 0].astype(float)
    D2 = ds.treatments[:, 1].astype(float)
    Y1, Y2 = ds.outcomes[:, 0], ds.outcomes[:, 1]
    X1 = ds.covariates[0]
    one = np.ones(n)
    a02, a12, g02, g12, g22 = _ols(np.column_stack([one, Y1, D2, D2 * D1, D2 * Y1]), Y2, "stage 2")
    g2 = StageRule.linear(2, (g02, g12, g22), (0, 1))
    contrast = g02 + g12 * D1 + g22 * Y1
    pseudo = a02 + a12 * Y1 + np.maximum(0.0, contrast)
    k1 = X1.shape[1]
    Z = np.column_stack([one, X1, D1, D1[:, None] * X1])
    coef = _ols(Z, pseudo, "stage 1")
    g1 = StageRule.linear(1, coef[1 + k1 :], tuple(range(k1)))
    dtr = Dtr((g1, g2))
    if pm is None:
        pm = PropensityModel.known(0.5, 2)
    rep = treated_shares(ds, dtr)
    means = None if ds.outcome_means is None else [float(v) for v in ds.outcome_means]
    return FitResult(
        method="qlearning",
        dtr=dtr,
        welfare=empirical_welfare(ds, dtr, pm, cfg.weights),
        shares=rep.shares.tolist(),
        strategy="regression",
        raw_dtr=dtr_to_raw_outcomes(dtr, means) if ds.demeaned and means else None,
        outcome_means=means,
    )


# convenience -------------------------------------------------------------------------------------

_METHODS = ("backward", "simultaneous", "qlearning")


def fit(method: str, ds: PanelDataset, pm: PropensityModel, cfg: EstimationConfig, demean: bool = True) -> FitResult:
    """Run an estimator by name, demeaning outcomes first when asked.

    With ``demean=True`` the DEWM criterion sees per-stage centred outcomes,
    which makes the fitted regime invariant to adding constants to
    outcomes; ``raw_dtr`` of the result reads raw outcomes.  A budget in
    ``cfg`` routes ``"simultaneous"`` to :func:`fit_simultaneous_budget`.
    """
    if method not in _METHODS:
        raise ValueError(f"method must be one of {_METHODS}, got {method!r}")
    work = demean_outcomes(ds) if demean and not ds.demeaned else ds
    if method == "backward":
        return fit_backward(work, pm, cfg)
    if method == "simultaneous":
        if cfg.budget is not None:
            return fit_simultaneous_budget(work, pm, cfg)
        return fit_simultaneous(work, pm, cfg)
    return fit_qlearning(work, cfg, pm)
