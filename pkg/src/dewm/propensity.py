"""Per-stage treatment propensities ``e_t(d, h) = P(D_t = d | H_t = h)``.

Each stage carries one entry:

* :class:`Known` -- a constant probability of treatment (experimental data);
* :class:`KnownTable` -- probabilities looked up by the values of selected
  history features (stratified experiments);
* :class:`Logistic` -- ``P(D_t = 1 | h) = sigmoid((1, h[selector]) . beta)``,
  normally produced by :func:`fit_logistic_stage`.

Every probability handed out is clipped into ``[clip_floor, 1 - clip_floor]``
so inverse-propensity weights stay finite.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from .data import HistoryVector, PanelDataset
from .policy import parse_kv

__all__ = [
    "Known",
    "KnownTable",
    "Logistic",
    "PropensityModel",
    "PropensityFitError",
    "LogisticFit",
    "propensity_at",
    "fit_logistic_stage",
    "fit_logistic",
    "dumps_propensity",
    "loads_propensity",
]

DEFAULT_CLIP = 0.01


class PropensityFitError(RuntimeError):
    """Logistic fitting failed (single treatment arm or separation)."""


@dataclass(frozen=True)
class Known:
    """Constant probability ``p1`` of treatment at this stage."""

    p1: float

    def __post_init__(self):
        if not 0.0 < float(self.p1) < 1.0:
            raise ValueError(f"known propensity must lie strictly in (0, 1), got {self.p1}")

    def treat_prob(self, H: np.ndarray) -> np.ndarray:
        return np.full(H.shape[0], float(self.p1))


@dataclass(frozen=True)
class KnownTable:
    """Known probabilities keyed by the values of ``h[selector]``.

    ``table`` maps tuples of feature values to the probability of treatment.
    Histories whose key is missing fall back to ``default`` (an error when
    ``default`` is None).
    """

    selector: tuple
    table: dict
    default: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "selector", tuple(int(j) for j in self.selector))
        table = {tuple(float(v) for v in k): float(p) for k, p in dict(self.table).items()}
        for k, p in table.items():
            if not 0.0 < p < 1.0:
                raise ValueError(f"table propensity for {k} must lie in (0, 1), got {p}")
            if len(k) != len(self.selector):
                raise ValueError(f"table key {k} does not match selector length")
        object.__setattr__(self, "table", table)

    def treat_prob(self, H: np.ndarray) -> np.ndarray:
        out = np.empty(H.shape[0])
        keys = H[:, list(self.selector)]
        for i, key in enumerate(map(tuple, keys.tolist())):
            p = self.table.get(key, self.default)
            if p is None:
                raise KeyError(f"no propensity entry for history key {key}")
            out[i] = p
        return out


@dataclass(frozen=True)
class Logistic:
    """Logistic propensity over ``(1, h[selector])``."""

    beta: tuple
    selector: tuple

    def __post_init__(self):
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(self, "selector", tuple(int(j) for j in self.selector))
        if len(self.beta) != 1 + len(self.selector):
            raise ValueError("logistic beta must have length 1 + len(selector)")

    def treat_prob(self, H: np.ndarray) -> np.ndarray:
        b = np.asarray(self.beta)
        return expit(b[0] + H[:, list(self.selector)] @ b[1:])


Entry = Union[Known, KnownTable, Logistic]


@dataclass(frozen=True)
class PropensityModel:
    """One propensity entry per stage plus the overlap clip ``clip_floor``."""

    stages: tuple
    clip_floor: float = DEFAULT_CLIP

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not 0.0 < self.clip_floor < 0.5:
            raise ValueError("clip_floor must lie in (0, 0.5)")

    @classmethod
    def known(cls, p1: Union[float, Sequence[float]], T: int, clip_floor: float = DEFAULT_CLIP):
        ps = [p1] * T if np.isscalar(p1) else list(p1)
        return cls(tuple(Known(float(p)) for p in ps), clip_floor)

    @property
    def stage_count(self) -> int:
        return len(self.stages)

    def treat_prob(self, t: int, H: np.ndarray) -> np.ndarray:
        """Clipped ``P(D_t = 1 | h)`` for stacked histories."""
        H = np.atleast_2d(np.asarray(H, dtype=float))
        p = self.stages[t - 1].treat_prob(H)
        return np.clip(p, self.clip_floor, 1.0 - self.clip_floor)

    def probabilities(self, ds: PanelDataset) -> np.ndarray:
        """``e_t(D_it, H_it)`` at the observed treatments, shape (n, T)."""
        if ds.stage_count != self.stage_count:
            raise ValueError(
                f"propensity model has {self.stage_count} stages, data has {ds.stage_count}"
            )
        cols = []
        for t in range(1, ds.stage_count + 1):
            p1 = self.treat_prob(t, ds.history_matrix(t))
            d = ds.treatments[:, t - 1]
            cols.append(np.where(d == 1, p1, 1.0 - p1))
        return np.column_stack(cols)


def propensity_at(model: PropensityModel, t: int, d: int, h) -> float:
    """``e_t(d, h)`` for a single history, clipped into the overlap band."""
    if not 1 <= t <= model.stage_count:
        raise IndexError(f"stage {t} out of range 1..{model.stage_count}")
    if isinstance(h, HistoryVector):
        if h.stage != t:
            raise ValueError(f"history is for stage {h.stage}, not {t}")
        h = h.values
    p1 = float(model.treat_prob(t, np.asarray(h, dtype=float)[None, :])[0])
    return p1 if int(d) == 1 else 1.0 - p1


# logistic fitting ----------------------------------------------------------------


@dataclass
class LogisticFit:
    """Result of a Newton fit; ``loglik`` holds the accepted iterates."""

    entry: Logistic
    iterations: int
    converged: bool
    loglik: list = field(default_factory=list)


def _loglik(X, d, beta):
    eta = X @ beta
    return float(np.sum(d * eta - np.logaddexp(0.0, eta)))


def _newton(X, d, tol=1e-8, max_iter=100):
    beta = np.zeros(X.shape[1])
    ll = _loglik(X, d, beta)
    history = [ll]
    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        grad = X.T @ (d - p)
        if np.max(np.abs(grad)) < tol:
            return beta, it - 1, True, history
        W = p * (1.0 - p)
        hess = X.T @ (X * W[:, None])
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        scale = 1.0
        while True:
            cand = beta + scale * step
            ll_new = _loglik(X, d, cand)
            if ll_new >= ll or scale < 1e-10:
                break
            scale *= 0.5
        if ll_new < ll:
            # no ascent direction left at machine precision
            return beta, it, False, history
        beta, ll = cand, ll_new
        history.append(ll)
    p = expit(X @ beta)
    converged = np.max(np.abs(X.T @ (d - p))) < tol
    return beta, max_iter, bool(converged), history


def fit_logistic_stage(
    ds: PanelDataset, t: int, selector: Sequence[int], tol: float = 1e-8, max_iter: int = 100
) -> LogisticFit:
    """Maximum-likelihood logistic propensity for stage ``t``.

    Damped Newton iterations from ``beta = 0``: each full step is halved until
    the log-likelihood does not decrease, and the loop stops once the
    gradient max-norm falls below ``tol`` or after ``max_iter`` steps.

    Raises
    ------
    PropensityFitError
        If only one treatment arm is present, or the data are (quasi-)separated
        so the coefficients diverge.
    """
    d = ds.treatments[:, t - 1].astype(float)
    if d.min() == d.max():
        raise PropensityFitError(
            f"stage {t}: all treatments equal {int(d[0])}; a logistic propensity needs both arms"
        )
    selector = tuple(int(j) for j in selector)
    H = ds.history_matrix(t)
    X = np.column_stack([np.ones(ds.n), H[:, list(selector)]])
    beta, iters, converged, history = _newton(X, d, tol, max_iter)
    eta = X @ beta
    separated = np.all(np.where(d == 1, eta > 15, eta < -15)) or np.max(np.abs(beta)) > 1e4
    if separated or not converged:
        raise PropensityFitError(
            f"stage {t}: logistic fit did not converge (max |beta| = {np.max(np.abs(beta)):.3g}); "
            "treatment looks perfectly separated by the selected features. Use a Known "
            "propensity, fewer features, or a larger clip floor."
        )
    return LogisticFit(Logistic(tuple(beta), selector), iters, converged, history)


def fit_logistic(
    ds: PanelDataset, selectors: Sequence[Sequence[int]], clip_floor: float = DEFAULT_CLIP
) -> PropensityModel:
    """Fit a logistic entry for every stage; ``selectors[t-1]`` picks features."""
    if len(selectors) != ds.stage_count:
        raise ValueError("need one selector per stage")
    entries = [fit_logistic_stage(ds, t, sel).entry for t, sel in enumerate(selectors, start=1)]
    return PropensityModel(tuple(entries), clip_floor)


# serialisation -------------------------------------------------------------------


def dumps_propensity(model: PropensityModel) -> str:
    lines = ["# dewm propensity v1", f"stages = {model.stage_count}", f"clip_floor = {model.clip_floor!r}"]
    for t, e in enumerate(model.stages, start=1):
        if isinstance(e, Known):
            lines += [f"stage.{t}.kind = known", f"stage.{t}.p1 = {float(e.p1)!r}"]
        elif isinstance(e, Logistic):
            lines += [
                f"stage.{t}.kind = logistic",
                f"stage.{t}.selector = " + ", ".join(str(j) for j in e.selector),
                f"stage.{t}.beta = " + ", ".join(repr(b) for b in e.beta),
            ]
        else:
            lines += [
                f"stage.{t}.kind = table",
                f"stage.{t}.selector = " + ", ".join(str(j) for j in e.selector),
            ]
            if e.default is not None:
                lines.append(f"stage.{t}.default = {e.default!r}")
            for k, (key, p) in enumerate(sorted(e.table.items())):
                lines.append(f"stage.{t}.row.{k} = " + ", ".join(repr(v) for v in key) + f" : {p!r}")
    return "\n".join(lines) + "\n"


def loads_propensity(text: str) -> PropensityModel:
    kv = parse_kv(text)
    T = int(kv["stages"])
    entries = []
    for t in range(1, T + 1):
        kind = kv[f"stage.{t}.kind"]
        sel = [int(v) for v in kv.get(f"stage.{t}.selector", "").split(",") if v.strip()]
        if kind == "known":
            entries.append(Known(float(kv[f"stage.{t}.p1"])))
        elif kind == "logistic":
            entries.append(Logistic([float(v) for v in kv[f"stage.{t}.beta"].split(",")], sel))
        elif kind == "table":
            table = {}
            prefix = f"stage.{t}.row."
            for key, val in kv.items():
                if key.startswith(prefix):
                    lhs, p = val.split(":")
                    table[tuple(float(v) for v in lhs.split(",") if v.strip())] = float(p)
            default = kv.get(f"stage.{t}.default")
            entries.append(KnownTable(sel, table, None if default is None else float(default)))
        else:
            raise ValueError(f"unknown propensity kind {kind!r} at stage {t}")
    return PropensityModel(tuple(entries), float(kv.get("clip_floor", DEFAULT_CLIP)))
