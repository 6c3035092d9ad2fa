"""Stage rules, dynamic treatment regimes and feasible policy classes.

A stage rule maps a stage history to a binary treatment.  Two kinds exist:

* constant rules, ``g_t(h) = c`` with ``c`` in ``{0, 1}``;
* linear eligibility rules, ``g_t(h) = 1{(1, h[selector]) . beta >= 0}``.

The threshold of an eligibility score is folded into the intercept, so
``1{b'h >= c}`` is stored as ``beta = (-c, b)``.  A score of exactly zero
assigns treatment.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .data import HistoryVector, PanelDataset, Trajectory, history

__all__ = [
    "StageRule",
    "Dtr",
    "Constants",
    "LinearClass",
    "Intertemporal",
    "PolicyClassSpec",
    "IntertemporalReport",
    "apply_rule",
    "match_indicator",
    "check_intertemporal",
    "pairwise_allowed",
    "dumps_dtr",
    "loads_dtr",
    "dtr_to_raw_outcomes",
]

SIGNS = ("free", "nonneg", "nonpos")


@dataclass(frozen=True)
class StageRule:
    """Treatment rule for one stage (1-based ``stage``)."""

    stage: int
    kind: str
    value: int = 1
    beta: tuple = ()
    selector: tuple = ()

    def __post_init__(self):
        if self.kind == "constant":
            if self.value not in (0, 1):
                raise ValueError("constant rule value must be 0 or 1")
        elif self.kind == "linear":
            object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
            object.__setattr__(self, "selector", tuple(int(j) for j in self.selector))
            if len(self.beta) != 1 + len(self.selector):
                raise ValueError(
                    f"beta has length {len(self.beta)}, expected 1 + {len(self.selector)}"
                )
            if any(j < 0 for j in self.selector):
                raise ValueError("selector indices must be non-negative")
        else:
            raise ValueError(f"unknown rule kind {self.kind!r}")

    @classmethod
    def constant(cls, stage: int, value: int) -> "StageRule":
        return cls(stage=stage, kind="constant", value=int(value))

    @classmethod
    def linear(cls, stage: int, beta, selector) -> "StageRule":
        return cls(stage=stage, kind="linear", beta=tuple(beta), selector=tuple(selector))

    def scores(self, H: np.ndarray) -> np.ndarray:
        """Eligibility scores for stacked histories ``H`` of shape (n, L)."""
        H = np.asarray(H, dtype=float)
        if H.ndim == 1:
            H = H[None, :]
        if self.kind == "constant":
            return np.full(H.shape[0], 1.0 if self.value else -1.0)
        if self.selector and max(self.selector) >= H.shape[1]:
            raise ValueError(
                f"selector index {max(self.selector)} invalid for stage-{self.stage} "
                f"history of length {H.shape[1]}"
            )
        b = np.asarray(self.beta)
        return b[0] + H[:, list(self.selector)] @ b[1:]

    def assign(self, H: np.ndarray) -> np.ndarray:
        """Vectorised rule output (int8 array) over stacked histories."""
        H = np.asarray(H, dtype=float)
        if self.kind == "constant":
            n = 1 if H.ndim == 1 else H.shape[0]
            return np.full(n, self.value, dtype=np.int8)
        return (self.scores(H) >= 0).astype(np.int8)

    def __call__(self, h) -> int:
        return apply_rule(self, h)


def apply_rule(rule: StageRule, h: Union[HistoryVector, np.ndarray]) -> int:
    """Evaluate ``rule`` on one history vector."""
    if isinstance(h, HistoryVector):
        if h.stage != rule.stage:
            raise ValueError(f"history is for stage {h.stage}, rule is for stage {rule.stage}")
        values = h.values
    else:
        values = np.asarray(h, dtype=float)
    if values.ndim != 1:
        raise ValueError("expected a single history vector")
    return int(rule.assign(values[None, :])[0])


@dataclass(frozen=True)
class Dtr:
    """A dynamic treatment regime ``(g_1, ..., g_T)``."""

    rules: tuple

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        for t, r in enumerate(self.rules, start=1):
            if r.stage != t:
                raise ValueError(f"rule at position {t} is tagged stage {r.stage}")

    @classmethod
    def constant(cls, values: Sequence[int]) -> "Dtr":
        return cls(tuple(StageRule.constant(t, v) for t, v in enumerate(values, start=1)))

    @property
    def stage_count(self) -> int:
        return len(self.rules)

    def __getitem__(self, t: int) -> StageRule:
        """1-based stage access."""
        return self.rules[t - 1]

    def replace(self, t: int, rule: StageRule) -> "Dtr":
        rules = list(self.rules)
        rules[t - 1] = rule
        return Dtr(tuple(rules))

    def assignments(self, ds: PanelDataset) -> np.ndarray:
        """``g_t(H_it)`` along observed histories, shape (n, T), int8."""
        if ds.stage_count != self.stage_count:
            raise ValueError(f"DTR has {self.stage_count} stages, data has {ds.stage_count}")
        return np.column_stack(
            [r.assign(ds.history_matrix(t)) for t, r in enumerate(self.rules, start=1)]
        ).astype(np.int8)


def match_indicator(dtr: Dtr, traj: Trajectory, t: int) -> int:
    """``prod_{s<=t} 1{g_s(H_s) = D_s}`` for one trajectory."""
    if not 1 <= t <= traj.stage_count:
        raise IndexError(f"stage {t} out of range")
    for s in range(1, t + 1):
        if apply_rule(dtr[s], history(traj, s)) != int(traj.treatments[s - 1]):
            return 0
    return 1


# policy classes ---------------------------------------------------------------


@dataclass(frozen=True)
class Constants:
    """The class ``{0, 1}`` of constant rules."""

    def n_coef(self) -> int:
        return 1


@dataclass(frozen=True)
class LinearClass:
    """Linear eligibility rules over ``selector`` features of the stage history.

    ``signs`` has one entry per coefficient (intercept first), each one of
    ``"free"``, ``"nonneg"`` or ``"nonpos"``.  Defaults to all free.
    """

    selector: tuple
    signs: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "selector", tuple(int(j) for j in self.selector))
        signs = self.signs
        if signs is None:
            signs = ("free",) * (1 + len(self.selector))
        signs = tuple(signs)
        if len(signs) != 1 + len(self.selector):
            raise ValueError(
                f"sign_constraints length {len(signs)} does not match beta length "
                f"{1 + len(self.selector)}"
            )
        if any(s not in SIGNS for s in signs):
            raise ValueError(f"sign constraints must be one of {SIGNS}")
        object.__setattr__(self, "signs", signs)

    @property
    def constrained(self) -> bool:
        return any(s != "free" for s in self.signs)

    def admits_beta(self, beta) -> bool:
        for b, s in zip(beta, self.signs):
            if (s == "nonneg" and b < 0) or (s == "nonpos" and b > 0):
                return False
        return True

    def admits(self, rule: StageRule) -> bool:
        if rule.kind == "constant":
            # constant 1 is beta = 0; constant 0 is beta = (-1, 0, ...)
            return rule.value == 1 or self.signs[0] != "nonneg"
        return rule.selector == self.selector and self.admits_beta(rule.beta)


class Intertemporal(enum.Enum):
    NONE = "none"
    ONESHOT = "oneshot"
    START = "start"
    STOP = "stop"

    @classmethod
    def parse(cls, value) -> "Intertemporal":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"intertemporal constraint must be one of {[k.value for k in cls]}, got {value!r}"
            ) from None


def pairwise_allowed(kind: Intertemporal, earlier, later):
    """Elementwise feasibility of treatments at an earlier and a later stage.

    OneShot forbids treating twice, StartTime requires ``earlier <= later`` and
    StopTime requires ``earlier >= later``.  Works on scalars and arrays.
    """
    earlier = np.asarray(earlier)
    later = np.asarray(later)
    if kind is Intertemporal.ONESHOT:
        return earlier + later <= 1
    if kind is Intertemporal.START:
        return earlier <= later
    if kind is Intertemporal.STOP:
        return earlier >= later
    return np.ones(np.broadcast(earlier, later).shape, dtype=bool)


@dataclass(frozen=True)
class PolicyClassSpec:
    """Per-stage rule classes plus an intertemporal restriction."""

    stages: tuple
    intertemporal: Intertemporal = Intertemporal.NONE

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "intertemporal", Intertemporal.parse(self.intertemporal))
        for c in self.stages:
            if not isinstance(c, (Constants, LinearClass)):
                raise TypeError(f"unsupported stage class {c!r}")

    @classmethod
    def constants(cls, T: int, intertemporal=Intertemporal.NONE) -> "PolicyClassSpec":
        return cls(tuple(Constants() for _ in range(T)), intertemporal)

    @property
    def stage_count(self) -> int:
        return len(self.stages)

    def __getitem__(self, t: int):
        return self.stages[t - 1]


@dataclass(frozen=True)
class IntertemporalReport:
    feasible: bool
    stage: Optional[int] = None
    detail: str = ""

    def __str__(self) -> str:
        return "feasible" if self.feasible else f"violation at stage {self.stage}: {self.detail}"


def check_intertemporal(
    dtr: Dtr, traj: Trajectory, kind, path: str = "observed"
) -> IntertemporalReport:
    """Check a DTR against an intertemporal restriction along one trajectory.

    ``path="observed"`` compares ``g_t(H_t)`` with the realised earlier
    treatments of ``traj`` (the estimation-time reading); ``path="policy"``
    compares it with the DTR's own earlier outputs (the deployment reading).
    The first violating stage is reported.
    """
    kind = Intertemporal.parse(kind)
    if kind is Intertemporal.NONE:
        raise ValueError("no intertemporal restriction to check")
    T = dtr.stage_count
    outputs = [apply_rule(dtr[t], history(traj, t)) for t in range(1, T + 1)]
    if path == "observed":
        prior = [int(d) for d in traj.treatments]
    elif path == "policy":
        prior = outputs
    else:
        raise ValueError("path must be 'observed' or 'policy'")
    for t in range(2, T + 1):
        g = outputs[t - 1]
        if kind is Intertemporal.ONESHOT:
            total = sum(prior[: t - 1]) + g
            if total > 1:
                return IntertemporalReport(False, t, f"treatment count {total} > 1")
        else:
            for s in range(1, t):
                if not pairwise_allowed(kind, prior[s - 1], g):
                    rel = "<=" if kind is Intertemporal.START else ">="
                    return IntertemporalReport(
                        False, t, f"d{s} = {prior[s - 1]} {rel} g{t} = {g} fails"
                    )
    return IntertemporalReport(True)


# serialisation ----------------------------------------------------------------


def dumps_dtr(dtr: Dtr, labels: Optional[Sequence[Sequence[str]]] = None) -> str:
    """Key-value text form of a DTR; floats use ``repr`` so loading is exact."""
    lines = ["# dewm dtr v1", f"stages = {dtr.stage_count}"]
    for t, r in enumerate(dtr.rules, start=1):
        lines.append(f"stage.{t}.kind = {r.kind}")
        if r.kind == "constant":
            lines.append(f"stage.{t}.value = {r.value}")
        else:
            lines.append(f"stage.{t}.selector = " + ", ".join(str(j) for j in r.selector))
            lines.append(f"stage.{t}.beta = " + ", ".join(repr(b) for b in r.beta))
            if labels is not None:
                names = [labels[t - 1][j] for j in r.selector]
                lines.append(f"# stage.{t}.features = " + ", ".join(["1"] + names))
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def loads_dtr(text: str) -> Dtr:
    kv = parse_kv(text)
    T = int(kv["stages"])
    rules = []
    for t in range(1, T + 1):
        kind = kv[f"stage.{t}.kind"]
        if kind == "constant":
            rules.append(StageRule.constant(t, int(kv[f"stage.{t}.value"])))
        else:
            sel = [int(v) for v in kv[f"stage.{t}.selector"].split(",") if v.strip()]
            rules.append(StageRule.linear(t, _floats(kv[f"stage.{t}.beta"]), sel))
    return Dtr(tuple(rules))


def dtr_to_raw_outcomes(dtr: Dtr, outcome_means: Sequence[float]) -> Dtr:
    """Rewrite a DTR fitted on demeaned outcomes so it reads raw outcomes.

    A coefficient ``b`` on outcome slot ``y_s`` contributes ``b (y_s - mean_s)``;
    the ``-b mean_s`` part moves into the intercept.
    """
    rules = []
    for t, r in enumerate(dtr.rules, start=1):
        if r.kind != "linear":
            rules.append(r)
            continue
        beta = list(r.beta)
        for k, j in enumerate(r.selector, start=1):
            # outcome slots of the stage-t history occupy positions t-1 .. 2t-3
            if t - 1 <= j < 2 * (t - 1):
                s = j - (t - 1)
                beta[0] -= beta[k] * float(outcome_means[s])
        rules.append(StageRule.linear(t, beta, r.selector))
    return Dtr(tuple(rules))
