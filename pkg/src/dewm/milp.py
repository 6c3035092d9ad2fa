"""Mixed-integer linear programs for two-stage DEWM, written as LP text.

The in-process estimators search exactly by enumeration.  For larger
policy classes the same problems can be handed to an external MILP solver.
Every linear rule becomes a coefficient block ``b{t}_0..b{t}_p`` (intercept
first) and every observation a binary ``z{t}_{i}`` that must equal the rule's
output, enforced by two big-M rows::

    score_it - C_it (1 + eps) z_it <= -eps C_it     (z = 0 forces score < 0)
    C_it z_it - score_it           <= C_it          (z = 1 forces score >= 0)

with ``score_it = (1, H_it[selector]) . b_t``, coefficients boxed in
``[-1, 1]`` and ``C_it = 1 + ||(1, H_it[selector])||_1``, which exceeds every
attainable ``|score_it|``.  Rules are scale invariant, so the box loses
nothing.  The product ``z1 z2`` needed by the simultaneous objective is a
third binary ``z3_{i}`` tied by the exact McCormick rows.

Objectives include their constant term, so for any regime the model value
at the regime's induced ``z`` equals ``n`` times the corresponding empirical
criterion.

LP grammar written and read here (a subset of the CPLEX LP format)::

    \\ comment
    Maximize
     obj: +c var +c var ... +constant
    Subject To
     name: +c var ... <= rhs        (<=, >= or =)
    Bounds
     lo <= var <= hi
    Binaries
     var ...
    End

Long expressions continue on lines that start with three spaces.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import PanelDataset
from .policy import Constants, Dtr, Intertemporal, LinearClass, PolicyClassSpec, StageRule
from .propensity import PropensityModel
from .welfare import BudgetSpec, WelfareWeights

__all__ = [
    "EPS_STRICT",
    "Row",
    "MilpModel",
    "build_backward_milp",
    "build_simultaneous_milp",
    "write_lp",
    "read_lp",
    "induced_assignment",
    "LpParseError",
    "MilpSolution",
    "solve",
]

EPS_STRICT = 1e-6
_TERMS_PER_LINE = 6


class LpParseError(ValueError):
    pass


@dataclass
class Row:
    name: str
    terms: list  # [(var, coef)]
    sense: str  # "<=", ">=", "="
    rhs: float

    def activity(self, values: dict) -> float:
        return float(sum(c * values[v] for v, c in self.terms))

    def satisfied(self, values: dict, tol: float = 1e-9) -> bool:
        a = self.activity(values)
        if self.sense == "<=":
            return a <= self.rhs + tol
        if self.sense == ">=":
            return a >= self.rhs - tol
        return abs(a - self.rhs) <= tol


@dataclass
class MilpModel:
    """A maximisation MILP with named variables and rows."""

    name: str = "dewm"
    objective: list = field(default_factory=list)  # [(var, coef)]
    objective_constant: float = 0.0
    rows: list = field(default_factory=list)
    bounds: dict = field(default_factory=dict)  # continuous var -> (lo, hi)
    binaries: list = field(default_factory=list)
    big_m: dict = field(default_factory=dict)  # (t, i) -> C_it
    eps_strict: float = EPS_STRICT
    selectors: dict = field(default_factory=dict)  # t -> selector tuple

    def objective_value(self, values: dict) -> float:
        return float(sum(c * values.get(v, 0.0) for v, c in self.objective)) + self.objective_constant

    def violated_rows(self, values: dict, tol: float = 1e-9) -> list:
        return [r.name for r in self.rows if not r.satisfied(values, tol)]

    @property
    def variables(self) -> list:
        return list(self.bounds) + list(self.binaries)


# weights -------------------------------------------------------------------------------


def _check_two_stage(ds: PanelDataset):
    if ds.stage_count != 2:
        raise ValueError(f"MILP export covers two-stage problems only, data has {ds.stage_count} stages")


def _resolve_kind(intertemporal, class_spec) -> Intertemporal:
    """An explicit restriction wins over the one carried by ``class_spec``."""
    if intertemporal is not None:
        return Intertemporal.parse(intertemporal)
    return Intertemporal.NONE if class_spec is None else class_spec.intertemporal


def _selectors(ds: PanelDataset, class_spec: Optional[PolicyClassSpec]):
    """Per-stage selectors and sign constraints (constants become intercept-only rules)."""
    out = {}
    for t in (1, 2):
        L = ds.history_matrix(t).shape[1]
        if class_spec is None:
            out[t] = (tuple(range(L)), ("free",) * (L + 1))
        else:
            cls = class_spec[t]
            if isinstance(cls, Constants):
                out[t] = ((), ("free",))
            else:
                out[t] = (cls.selector, cls.signs)
    return out


def _simultaneous_weights(ds: PanelDataset, pm: PropensityModel, w: WelfareWeights):
    e = pm.probabilities(ds)
    g = w.as_array()
    D1 = ds.treatments[:, 0].astype(float)
    D2 = ds.treatments[:, 1].astype(float)
    c1 = g[0] * ds.outcomes[:, 0] / e[:, 0]
    c2 = g[1] * ds.outcomes[:, 1] / (e[:, 0] * e[:, 1])
    s1, s2 = 2 * D1 - 1, 2 * D2 - 1
    m1 = s1 * (c1 + (1 - D2) * c2)
    m2 = (1 - D1) * s2 * c2
    m3 = s1 * s2 * c2
    const = float(np.sum((1 - D1) * c1 + (1 - D1) * (1 - D2) * c2))
    return m1, m2, m3, const


def _backward_weights(ds, pm, w, step, fitted_g2):
    e = pm.probabilities(ds)
    g = w.as_array()
    D1 = ds.treatments[:, 0].astype(float)
    D2 = ds.treatments[:, 1].astype(float)
    if step == 1:
        c = g[1] * ds.outcomes[:, 1] / e[:, 1]
        return (2 * D2 - 1) * c, float(np.sum((1 - D2) * c))
    agree2 = (fitted_g2.assign(ds.history_matrix(2)) == ds.treatments[:, 1]).astype(float)
    mass = (g[0] * ds.outcomes[:, 0] + agree2 * g[1] * ds.outcomes[:, 1] / e[:, 1]) / e[:, 0]
    return (2 * D1 - 1) * mass, float(np.sum((1 - D1) * mass))


# model pieces -------------------------------------------------------------------------------


def _add_rule_block(model: MilpModel, ds: PanelDataset, t: int, selector, signs):
    for j, s in enumerate(signs):
        lo = 0.0 if s == "nonneg" else -1.0
        hi = 0.0 if s == "nonpos" else 1.0
        model.bounds[f"b{t}_{j}"] = (lo, hi)
    model.selectors[t] = tuple(selector)


def _indicator_rows(model: MilpModel, ds: PanelDataset, stages, eps: float):
    H = {t: ds.history_matrix(t) for t in stages}
    for i in range(ds.n):
        for t in stages:
            sel = model.selectors[t]
            a = np.concatenate([[1.0], H[t][i, list(sel)]])
            C = 1.0 + float(np.sum(np.abs(a)))
            model.big_m[(t, i + 1)] = C
            z = f"z{t}_{i + 1}"
            score = [(f"b{t}_{j}", float(a[j])) for j in range(len(a))]
            model.rows.append(Row(f"lo{t}_{i + 1}", score + [(z, -C * (1.0 + eps))], "<=", -eps * C))
            model.rows.append(Row(f"hi{t}_{i + 1}", [(z, C)] + [(v, -c) for v, c in score], "<=", C))


def _objective(model: MilpModel, pairs):
    for var, coef in pairs:
        if coef != 0.0:
            model.objective.append((var, float(coef)))


def build_backward_milp(
    ds: PanelDataset,
    pm: PropensityModel,
    w: WelfareWeights,
    step: int,
    fitted_g2: Optional[StageRule] = None,
    class_spec: Optional[PolicyClassSpec] = None,
    intertemporal=None,
    eps_strict: float = EPS_STRICT,
) -> MilpModel:
    """One step of two-stage Backward DEWM as a MILP.

    Step 1 chooses the stage-2 rule; step 2 chooses the stage-1 rule given
    ``fitted_g2``.  The intertemporal restriction (``intertemporal``, else
    the one carried by ``class_spec``) compares with the observed treatment
    of the other stage.  Without ``class_spec`` each stage's rule
    reads its whole history.
    """
    _check_two_stage(ds)
    if step not in (1, 2):
        raise ValueError("step must be 1 or 2")
    if step == 2 and fitted_g2 is None:
        raise ValueError("step 2 needs the fitted stage-2 rule")
    kind = _resolve_kind(intertemporal, class_spec)
    t = 2 if step == 1 else 1
    sel, signs = _selectors(ds, class_spec)[t]
    m, const = _backward_weights(ds, pm, w, step, fitted_g2)
    model = MilpModel(name=f"backward_step{step}", eps_strict=eps_strict)
    _add_rule_block(model, ds, t, sel, signs)
    model.binaries = [f"z{t}_{i + 1}" for i in range(ds.n)]
    _objective(model, ((f"z{t}_{i + 1}", m[i]) for i in range(ds.n)))
    model.objective_constant = const
    _indicator_rows(model, ds, (t,), eps_strict)
    if kind is not Intertemporal.NONE:
        other = ds.treatments[:, 1 if step == 2 else 0]
        for i in range(ds.n):
            z, d = f"z{t}_{i + 1}", float(other[i])
            if kind is Intertemporal.ONESHOT:
                model.rows.append(Row(f"it_{i + 1}", [(z, 1.0)], "<=", 1.0 - d))
            elif (kind is Intertemporal.START) == (step == 1):
                model.rows.append(Row(f"it_{i + 1}", [(z, 1.0)], ">=", d))
            else:
                model.rows.append(Row(f"it_{i + 1}", [(z, 1.0)], "<=", d))
    return model


def build_simultaneous_milp(
    ds: PanelDataset,
    pm: PropensityModel,
    w: WelfareWeights,
    budget: Optional[BudgetSpec] = None,
    intertemporal=None,
    class_spec: Optional[PolicyClassSpec] = None,
    alpha: Optional[float] = None,
    eps_strict: float = EPS_STRICT,
) -> MilpModel:
    """Two-stage Simultaneous DEWM as a MILP.

    Budget rows bound ``(1/n) sum_t sum_i K_tb z_it`` by ``C_b + alpha``;
    ``alpha`` defaults to the budget's own alpha, which must then be set.
    """
    _check_two_stage(ds)
    kind = _resolve_kind(intertemporal, class_spec)
    sels = _selectors(ds, class_spec)
    m1, m2, m3, const = _simultaneous_weights(ds, pm, w)
    n = ds.n
    model = MilpModel(name="simultaneous", eps_strict=eps_strict)
    for t in (1, 2):
        _add_rule_block(model, ds, t, *sels[t])
    model.binaries = (
        [f"z1_{i + 1}" for i in range(n)] + [f"z2_{i + 1}" for i in range(n)] + [f"z3_{i + 1}" for i in range(n)]
    )
    for i in range(n):
        _objective(model, [(f"z1_{i + 1}", m1[i]), (f"z2_{i + 1}", m2[i]), (f"z3_{i + 1}", m3[i])])
    model.objective_constant = const
    _indicator_rows(model, ds, (1, 2), eps_strict)
    for i in range(n):
        z1, z2, z3 = f"z1_{i + 1}", f"z2_{i + 1}", f"z3_{i + 1}"
        model.rows.append(Row(f"mca_{i + 1}", [(z3, 1.0), (z1, -1.0)], "<=", 0.0))
        model.rows.append(Row(f"mcb_{i + 1}", [(z3, 1.0), (z2, -1.0)], "<=", 0.0))
        model.rows.append(Row(f"mcc_{i + 1}", [(z3, 1.0), (z1, -1.0), (z2, -1.0)], ">=", -1.0))
    if kind is not Intertemporal.NONE:
        for i in range(n):
            z1, z2 = f"z1_{i + 1}", f"z2_{i + 1}"
            if kind is Intertemporal.START:
                model.rows.append(Row(f"it_{i + 1}", [(z2, 1.0), (z1, -1.0)], ">=", 0.0))
            elif kind is Intertemporal.STOP:
                model.rows.append(Row(f"it_{i + 1}", [(z2, 1.0), (z1, -1.0)], "<=", 0.0))
            else:
                model.rows.append(Row(f"it_{i + 1}", [(z1, 1.0), (z2, 1.0)], "<=", 1.0))
    if budget is not None:
        a = budget.alpha if alpha is None else alpha
        if a is None:
            raise ValueError("budget alpha is unresolved; pass alpha explicitly")
        for b, row in enumerate(budget.rows, start=1):
            terms = []
            for t in (1, 2):
                if row.K[t - 1] != 0.0:
                    terms += [(f"z{t}_{i + 1}", row.K[t - 1] / n) for i in range(n)]
            model.rows.append(Row(f"budget_{b}", terms, "<=", row.C + a))
    return model


def induced_assignment(model: MilpModel, ds: PanelDataset, dtr: Dtr) -> dict:
    """0/1 values of the model's ``z`` variables implied by ``dtr`` on ``ds``."""
    A = dtr.assignments(ds)
    values = {}
    for v in model.binaries:
        head, i = v.split("_")
        i = int(i) - 1
        if head == "z3":
            values[v] = float(A[i, 0] * A[i, 1])
        else:
            values[v] = float(A[i, int(head[1:]) - 1])
    return values


# LP text --------------------------------------------------------------------------------------


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _expr(terms, constant: Optional[float] = None) -> list:
    """Signed terms, wrapped into chunks of a few per line."""
    parts = [f"{'+' if c >= 0 else '-'}{_num(abs(c))} {v}" for v, c in terms]
    if constant is not None and constant != 0.0:
        parts.append(f"{'+' if constant >= 0 else '-'}{_num(abs(constant))}")
    if not parts:
        parts = ["0"]
    return [" ".join(parts[k : k + _TERMS_PER_LINE]) for k in range(0, len(parts), _TERMS_PER_LINE)]


def write_lp(model: MilpModel) -> str:
    """Deterministic LP text for ``model``."""
    out = [f"\\ {model.name}", "Maximize"]
    chunks = _expr(model.objective, model.objective_constant)
    out.append(f" obj: {chunks[0]}")
    out += [f"   {c}" for c in chunks[1:]]
    out.append("Subject To")
    for r in model.rows:
        chunks = _expr(r.terms)
        chunks[-1] += f" {r.sense} {_num(r.rhs)}"
        out.append(f" {r.name}: {chunks[0]}")
        out += [f"   {c}" for c in chunks[1:]]
    out.append("Bounds")
    for v, (lo, hi) in model.bounds.items():
        out.append(f" {_num(lo)} <= {v} <= {_num(hi)}")
    out.append("Binaries")
    for k in range(0, len(model.binaries), 8):
        out.append(" " + " ".join(model.binaries[k : k + 8]))
    out.append("End")
    return "\n".join(out) + "\n"


_TERM_RE = re.compile(r"([+-])\s*([0-9.eE+-]+)(?:\s+([A-Za-z_][\w]*))?")


def _parse_expr(text: str):
    terms, const = [], 0.0
    s = text.strip()
    if s == "0":
        return terms, const
    pos = 0
    for m in _TERM_RE.finditer(s):
        if s[pos : m.start()].strip():
            raise LpParseError(f"unexpected text {s[pos:m.start()]!r}")
        pos = m.end()
        val = float(m.group(2)) * (1.0 if m.group(1) == "+" else -1.0)
        if m.group(3):
            terms.append((m.group(3), val))
        else:
            const += val
    if s[pos:].strip():
        raise LpParseError(f"unexpected text {s[pos:]!r}")
    return terms, const


def read_lp(text: str) -> MilpModel:
    """Parse LP text produced by :func:`write_lp` back into a model."""
    section = None
    model = MilpModel()
    entries: list = []  # (section, logical line)
    for raw in text.splitlines():
        if raw.startswith("\\"):
            model.name = raw[1:].strip()
            continue
        key = raw.strip()
        if key in ("Maximize", "Subject To", "Bounds", "Binaries", "End"):
            section = key
            continue
        if not key:
            continue
        if raw.startswith("   ") and entries:
            entries[-1][1] += " " + key
        else:
            entries.append([section, key])
    for sec, line in entries:
        if sec == "Maximize":
            _, body = line.split(":", 1)
            model.objective, model.objective_constant = _parse_expr(body)
        elif sec == "Subject To":
            name, body = line.split(":", 1)
            m = re.match(r"(.*)\s(<=|>=|=)\s*(\S+)$", body.strip())
            if m is None:
                raise LpParseError(f"row {name!r} lacks a comparison")
            terms, const = _parse_expr(m.group(1))
            model.rows.append(Row(name.strip(), terms, m.group(2), float(m.group(3)) - const))
        elif sec == "Bounds":
            m = re.match(r"(\S+)\s*<=\s*(\S+)\s*<=\s*(\S+)$", line)
            if m is None:
                raise LpParseError(f"bad bounds line {line!r}")
            model.bounds[m.group(2)] = (float(m.group(1)), float(m.group(3)))
        elif sec == "Binaries":
            model.binaries += line.split()
        else:
            raise LpParseError(f"content outside a section: {line!r}")
    return model


# solving ------------------------------------------------------------------------------------


@dataclass
class MilpSolution:
    status: str
    objective: float
    values: dict

    def beta(self, t: int) -> np.ndarray:
        ks = sorted((int(v.split("_")[1]), x) for v, x in self.values.items() if v.startswith(f"b{t}_"))
        return np.array([x for _, x in ks])


def solve(model: MilpModel, time_limit: Optional[float] = None) -> MilpSolution:
    """Solve ``model`` with the HiGHS branch and bound bundled in scipy.

    Meant for small instances and cross-checks; large exports should go to
    a dedicated solver.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp

    names = model.variables
    index = {v: k for k, v in enumerate(names)}
    nv = len(names)
    c = np.zeros(nv)
    for v, coef in model.objective:
        c[index[v]] -= coef
    lo = np.array([model.bounds[v][0] for v in model.bounds] + [0.0] * len(model.binaries))
    hi = np.array([model.bounds[v][1] for v in model.bounds] + [1.0] * len(model.binaries))
    integrality = np.array([0] * len(model.bounds) + [1] * len(model.binaries))
    constraints = []
    if model.rows:
        A = np.zeros((len(model.rows), nv))
        rl = np.full(len(model.rows), -np.inf)
        ru = np.full(len(model.rows), np.inf)
        for r, row in enumerate(model.rows):
            for v, coef in row.terms:
                A[r, index[v]] += coef
            if row.sense in ("<=", "="):
                ru[r] = row.rhs
            if row.sense in (">=", "="):
                rl[r] = row.rhs
        constraints.append(LinearConstraint(A, rl, ru))
    options = {} if time_limit is None else {"time_limit": time_limit}
    res = milp(c, constraints=constraints, integrality=integrality, bounds=Bounds(lo, hi), options=options)
    if res.x is None:
        return MilpSolution(res.message, float("nan"), {})
    values = {v: float(res.x[k]) for k, v in enumerate(names)}
    for v in model.binaries:
        values[v] = float(round(values[v]))
    return MilpSolution("optimal" if res.status == 0 else res.message, model.objective_value(values), values)
