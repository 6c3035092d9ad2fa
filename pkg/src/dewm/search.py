"""Exact finite search over stage rules.

Every rule class used here induces finitely many dichotomies on a finite
sample, so a weighted classification problem

    max_g  sum_i w_i g(H_i)

can be solved exactly by listing one representative rule per dichotomy and
scoring them all.  A :class:`CandidateSet` does the scoring in bulk:
``totals(V)`` returns ``sum_i V_i g_k(H_i)`` for every candidate ``k`` at once,
which is all the estimators need (objective values, feasibility counts and
ratio constraints are all such sums).

Four candidate generators exist:

``ConstantCandidates``
    the two constant rules.
``ThresholdCandidates``
    one feature: every cut between consecutive distinct values, both
    orientations.  Totals are two cumulative sums.
``SweepCandidates``
    two features, no sign constraints: an angular sweep around each distinct
    point.  Each line through two points yields eight candidates (two
    orientations times four ways of splitting the points lying on the line).
    Totals cost O(m^2) for m distinct points.
``EnumeratedCandidates``
    any dimension and sign constraints: vertices of the hyperplane
    arrangement, perturbed into each adjacent cell.  The explicit
    assignment matrix is stored, so this is meant for small samples or low
    dimensions; an enumeration budget guards against blow-up.

The constant rules always occupy candidate indices 0 (treat nobody, when the
class admits it) and 1 (treat everybody), so that deterministic lowest-index
tie breaking prefers simple rules.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .policy import Constants, LinearClass, StageRule

__all__ = [
    "Provenance",
    "CandidateSet",
    "ConstantCandidates",
    "ThresholdCandidates",
    "SweepCandidates",
    "EnumeratedCandidates",
    "EnumerationBudgetError",
    "NoFeasibleCandidate",
    "enumerate_candidates",
    "argmax_weighted_rule",
    "best_index",
    "tie_tolerance",
]

ANGLE_TOL = 1e-12
DEFAULT_MAX_SUBSETS = 200_000


class EnumerationBudgetError(RuntimeError):
    """Hyperplane enumeration would exceed the configured subset budget."""


class NoFeasibleCandidate(RuntimeError):
    """Every candidate was filtered out by the feasibility predicate."""


@dataclass(frozen=True)
class Provenance:
    kind: str  # "constants" or "hyperplane"
    dimension: int = 0
    point_count: int = 0
    method: str = ""


class CandidateSet:
    """Ordered finite list of stage rules over a fixed sample.

    Subclasses implement :meth:`_unique_totals` and :meth:`rule`.
    """

    stage: int
    provenance: Provenance

    def __init__(self, stage: int, features: np.ndarray):
        X = np.asarray(features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        self.stage = stage
        self.features = X
        self.n = X.shape[0]
        if X.shape[1]:
            self.points, self.inverse = np.unique(X, axis=0, return_inverse=True)
            self.inverse = self.inverse.ravel()
        else:
            self.points = np.zeros((1, 0))
            self.inverse = np.zeros(self.n, dtype=np.intp)

    # interface ------------------------------------------------------------------
    def __len__(self) -> int:
        raise NotImplementedError

    def rule(self, k: int) -> StageRule:
        raise NotImplementedError

    def _unique_totals(self, Vu: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # shared -------------------------------------------------------------------------
    def aggregate(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if V.shape != (self.n,):
            raise ValueError(f"expected {self.n} per-observation values, got shape {V.shape}")
        return np.bincount(self.inverse, weights=V, minlength=len(self.points))

    def totals(self, V) -> np.ndarray:
        """``sum_i V_i g_k(H_i)`` for every candidate ``k``."""
        return self._unique_totals(self.aggregate(V))

    def assignment(self, k: int) -> np.ndarray:
        """Treatment of every sample row under candidate ``k`` (int8)."""
        return self.rule(k).assign(self._rule_input())[self.inverse] if self.n else np.zeros(0, np.int8)

    def _rule_input(self) -> np.ndarray:
        # rules produced here read columns 0..p-1 of the selected feature matrix
        return self.points

    @property
    def rules(self) -> list:
        return [self.rule(k) for k in range(len(self))]

    def dichotomies(self) -> set:
        """Distinct assignment patterns over the distinct points (small samples)."""
        out = set()
        for k in range(len(self)):
            out.add(tuple(self.rule(k).assign(self.points).tolist()))
        return out


def _const_rule(stage: int, value: int) -> StageRule:
    return StageRule.constant(stage, value)


class _SelectorMixin:
    """Candidate rules carry the class selector, but evaluate on selected columns."""

    selector: tuple

    def _linear(self, beta) -> StageRule:
        return StageRule.linear(self.stage, tuple(float(b) for b in beta), self.selector)

    def _rule_input(self) -> np.ndarray:
        # embed the distinct points into a history-like matrix so that
        # selector positions line up
        width = (max(self.selector) + 1) if self.selector else 0
        H = np.zeros((len(self.points), width))
        H[:, list(self.selector)] = self.points
        return H

    def dichotomies(self) -> set:
        H = self._rule_input()
        return {tuple(self.rule(k).assign(H).tolist()) for k in range(len(self))}


class ConstantCandidates(CandidateSet):
    """The rules ``{0, 1}``; index 0 is "treat nobody"."""

    def __init__(self, stage: int, n: int, values=(0, 1)):
        super().__init__(stage, np.zeros((n, 0)))
        self.values = tuple(values)
        self.provenance = Provenance("constants")

    def __len__(self) -> int:
        return len(self.values)

    def rule(self, k: int) -> StageRule:
        return _const_rule(self.stage, self.values[k])

    def _unique_totals(self, Vu):
        s = float(Vu.sum())
        return np.array([s if v else 0.0 for v in self.values])

    def assignment(self, k: int) -> np.ndarray:
        return np.full(self.n, self.values[k], dtype=np.int8)


class ThresholdCandidates(_SelectorMixin, CandidateSet):
    """One feature: ``{x >= c}`` and ``{x <= c}`` for every gap between values.

    ``slope`` restricts the orientation: ``"nonneg"`` keeps only upper sets,
    ``"nonpos"`` only lower sets.
    """

    def __init__(self, stage: int, features, selector, slope: str = "free"):
        super().__init__(stage, features)
        self.selector = tuple(selector)
        u = self.points[:, 0]
        self.u = u
        m = len(u)
        self.n_upper = m - 1 if slope in ("free", "nonneg") else 0
        self.n_lower = m - 1 if slope in ("free", "nonpos") else 0
        self.provenance = Provenance("hyperplane", 1, m, "threshold")

    def __len__(self) -> int:
        return 2 + self.n_upper + self.n_lower

    def rule(self, k: int) -> StageRule:
        if k < 2:
            return _const_rule(self.stage, k)
        k -= 2
        u = self.u
        if k < self.n_upper:
            j = k + 1  # treat u >= u[j]
            c = 0.5 * (u[j - 1] + u[j])
            return self._linear((-c, 1.0))
        j = k - self.n_upper  # treat u <= u[j]
        c = 0.5 * (u[j] + u[j + 1])
        return self._linear((c, -1.0))

    def _unique_totals(self, Vu):
        cs = np.concatenate([[0.0], np.cumsum(Vu)])
        S = cs[-1]
        parts = [np.array([0.0, S])]
        if self.n_upper:
            parts.append(S - cs[1:-1])
        if self.n_lower:
            parts.append(cs[1:-1])
        return np.concatenate(parts)


def _angles(P: np.ndarray, i: int) -> np.ndarray:
    """Polar angle in [0, 2 pi) of every point seen from point ``i``."""
    d = P - P[i]
    phi = np.arctan2(d[:, 1], d[:, 0])
    phi = np.where(phi < 0, phi + 2 * np.pi, phi)
    phi = np.where(phi > 2 * np.pi - ANGLE_TOL, 0.0, phi)
    return phi


class SweepCandidates(_SelectorMixin, CandidateSet):
    """Two free features: lines through pairs of distinct points.

    For each distinct point ``i`` (the pivot) the other points are sorted by
    angle.  Every direction ``theta`` in ``[0, pi)`` at which the line through
    ``i`` meets another point defines a group; points exactly on the line are
    split into "ahead" (angle ``theta``) and "behind" (angle ``theta + pi``).
    Each group produces eight candidates: positive side left or right of the
    directed line, times the line points treated as none, all, behind plus
    pivot, or ahead only.  Together with the two constants this realises every
    dichotomy a line can cut.  Different groups can realise the same
    dichotomy; duplicates are kept because lowest-index tie breaking makes
    them harmless and removing them would cost a pass over O(m^3) bits.
    """

    def __init__(self, stage: int, features, selector):
        super().__init__(stage, features)
        self.selector = tuple(selector)
        P = self.points
        m = len(P)
        self.m = m
        self.provenance = Provenance("hyperplane", 2, m, "sweep")
        if m < 2:
            self.orders = np.zeros((m, 0), dtype=np.intp)
            self.g_pivot = np.zeros(0, dtype=np.intp)
            self.g_theta = np.zeros(0)
            self._idx = np.zeros((4, 0), dtype=np.intp)
            return
        orders = np.empty((m, m - 1), dtype=np.intp)
        pivots, thetas, idx = [], [], []
        others_all = np.arange(m)
        for i in range(m):
            others = np.delete(others_all, i)
            phi = _angles(P, i)[others]
            o = np.argsort(phi, kind="stable")
            phi = phi[o]
            orders[i] = others[o]
            th = np.where(phi < np.pi - ANGLE_TOL, phi, phi - np.pi)
            th = np.sort(np.maximum(th, 0.0))
            keep = np.concatenate([[True], np.diff(th) > ANGLE_TOL])
            th = th[keep]
            a_lo = np.searchsorted(phi, th - ANGLE_TOL, "left")
            a_hi = np.searchsorted(phi, th + ANGLE_TOL, "right")
            b_lo = np.searchsorted(phi, th + np.pi - ANGLE_TOL, "left")
            b_hi = np.searchsorted(phi, th + np.pi + ANGLE_TOL, "right")
            base = i * m
            pivots.append(np.full(len(th), i))
            thetas.append(th)
            idx.append(np.stack([a_lo, a_hi, b_lo, b_hi]) + base)
        self.orders = orders
        self.g_pivot = np.concatenate(pivots)
        self.g_theta = np.concatenate(thetas)
        self._idx = np.concatenate(idx, axis=1)

    def __len__(self) -> int:
        return 2 + 8 * len(self.g_theta)

    def _unique_totals(self, Vu):
        S = float(Vu.sum())
        if len(self.g_theta) == 0:
            return np.array([0.0, S])
        m = self.m
        cs = np.zeros((m, m))
        np.cumsum(Vu[self.orders], axis=1, out=cs[:, 1:])
        flat = cs.ravel()
        a_lo, a_hi, b_lo, b_hi = (flat[j] for j in self._idx)
        A = a_hi - a_lo
        B = b_hi - b_lo
        L = b_lo - a_hi
        Vi = Vu[self.g_pivot]
        R = S - L - A - B - Vi
        out = np.empty((len(A), 8))
        for col, side in ((0, L), (4, R)):
            out[:, col] = side
            out[:, col + 1] = side + A + B + Vi
            out[:, col + 2] = side + B + Vi
            out[:, col + 3] = side + A
        return np.concatenate([[0.0, S], out.ravel()])

    # geometry ----------------------------------------------------------------------
    def intended_positive(self, k: int) -> np.ndarray:
        """Boolean mask over distinct points that candidate ``k`` is meant to treat."""
        if k < 2:
            return np.full(self.m, bool(k))
        g, c = divmod(k - 2, 8)
        i, th = int(self.g_pivot[g]), float(self.g_theta[g])
        phi = _angles(self.points, i)
        ahead = (phi >= th - ANGLE_TOL) & (phi <= th + ANGLE_TOL)
        behind = (phi >= th + np.pi - ANGLE_TOL) & (phi <= th + np.pi + ANGLE_TOL)
        left = (phi > th + ANGLE_TOL) & (phi < th + np.pi - ANGLE_TOL)
        ahead[i] = behind[i] = left[i] = False
        right = ~(ahead | behind | left)
        right[i] = False
        side = left if c < 4 else right
        opt = c % 4
        pos = side.copy()
        piv = np.zeros(self.m, bool)
        piv[i] = True
        if opt == 1:
            pos |= ahead | behind | piv
        elif opt == 2:
            pos |= behind | piv
        elif opt == 3:
            pos |= ahead
        return pos

    def _beta(self, k: int) -> np.ndarray:
        g, c = divmod(k - 2, 8)
        i, th = int(self.g_pivot[g]), float(self.g_theta[g])
        P = self.points
        x0 = P[i]
        u = np.array([np.cos(th), np.sin(th)])
        nl = np.array([-np.sin(th), np.cos(th)])
        phi = _angles(P, i)
        ahead = (phi >= th - ANGLE_TOL) & (phi <= th + ANGLE_TOL)
        behind = (phi >= th + np.pi - ANGLE_TOL) & (phi <= th + np.pi + ANGLE_TOL)
        ahead[i] = behind[i] = False
        online = ahead | behind
        online[i] = True
        d = P - x0
        cross = d @ nl
        along = d @ u
        off = np.abs(cross[~online])
        min_off = float(off.min()) if off.size else 1.0
        maxdist = float(np.abs(along).max()) or 1.0
        h = float(along[ahead].min()) if ahead.any() else 1.0
        sigma = 1.0 if c < 4 else -1.0
        opt = c % 4
        # score(x) = sigma * nl.(x - x0) + perturbation(x)
        lin = sigma * nl
        icpt = -sigma * float(nl @ x0)
        if opt == 0:
            icpt -= 0.5 * min_off
        elif opt == 1:
            icpt += 0.5 * min_off
        else:
            eps = 0.5 * min_off / (maxdist + h)
            s = 1.0 if opt == 3 else -1.0  # suffix: +eps(t - h/2); prefix: -eps(t - h/2)
            lin = lin + s * eps * u
            icpt += s * eps * (-float(u @ x0) - 0.5 * h)
        return np.concatenate([[icpt], lin])

    def rule(self, k: int) -> StageRule:
        if k < 2:
            return _const_rule(self.stage, k)
        beta = self._beta(k)
        want = self.intended_positive(k)
        got = (beta[0] + self.points @ beta[1:]) >= 0
        if not np.array_equal(want, got):
            beta = _separating_beta(self.points, want)
        return self._linear(beta)


def _separating_beta(P: np.ndarray, positive: np.ndarray) -> np.ndarray:
    """Max-margin style LP fallback: find beta with the requested dichotomy."""
    from scipy.optimize import linprog

    m, p = P.shape
    A = np.column_stack([np.ones(m), P])
    sgn = np.where(positive, 1.0, -1.0)
    # variables (beta, t); maximise t s.t. sgn_i a_i beta >= t, |beta| <= 1
    A_ub = np.column_stack([-(sgn[:, None] * A), np.ones(m)])
    res = linprog(
        c=np.concatenate([np.zeros(p + 1), [-1.0]]),
        A_ub=A_ub,
        b_ub=np.zeros(m),
        bounds=[(-1, 1)] * (p + 1) + [(None, 1)],
        method="highs",
    )
    if res.status != 0 or res.x[-1] <= 0:
        raise RuntimeError("requested dichotomy is not linearly separable")
    beta = res.x[:-1].copy()
    beta[0] -= 0.5 * res.x[-1]  # leave the margin on the untreated side only
    return beta


class EnumeratedCandidates(_SelectorMixin, CandidateSet):
    """Arrangement-vertex enumeration with sign constraints, any dimension.

    With ``q = p + 1`` coefficients, every ``q - 1`` rows taken from the
    data rows ``(1, x_j)`` and the unit rows of sign-constrained coordinates
    fix a ray ``r`` of the arrangement.  The rule ``r + eps * delta`` is
    formed for both orientations of ``r`` and every sign pattern of the
    chosen data rows, then kept if it satisfies the sign constraints.
    Candidates are deduplicated by their dichotomy over the distinct points.
    """

    def __init__(self, stage, features, selector, signs, max_subsets=DEFAULT_MAX_SUBSETS, chunk=2048):
        super().__init__(stage, features)
        self.selector = tuple(selector)
        self.signs = tuple(signs)
        P = self.points
        m, p = P.shape
        q = p + 1
        self.provenance = Provenance("hyperplane", p, m, "enumeration")
        A = np.column_stack([np.ones(m), P])
        norms = np.linalg.norm(A, axis=1)
        An = A / norms[:, None]
        cons = [j for j, s in enumerate(self.signs) if s != "free"]
        E = np.eye(q)[cons]
        rows = np.vstack([An, E])
        is_data = np.concatenate([np.ones(m, bool), np.zeros(len(cons), bool)])
        total = math.comb(len(rows), q - 1)
        if total > max_subsets:
            raise EnumerationBudgetError(
                f"hyperplane enumeration needs {total} row subsets (budget {max_subsets}) for "
                f"{m} distinct points in dimension {p}; raise the budget or export the problem "
                "as a MILP and solve it externally"
            )
        keyset = {}
        betas = []
        pats = []

        def add(beta, pattern):
            key = np.packbits(pattern).tobytes()
            if key not in keyset:
                keyset[key] = len(betas)
                betas.append(beta)
                pats.append(pattern)

        lower_ok = self.signs[0] != "nonneg"
        if lower_ok:
            add(np.concatenate([[-1.0], np.zeros(p)]), np.zeros(m, bool))
        else:
            # placeholder keeps constant 1 at index 1; masked out of every argmax
            betas.append(None)
            pats.append(np.zeros(m, bool))
        add(np.zeros(q), np.ones(m, bool))
        self._has_zero = lower_ok

        lo = np.array([0.0 if s == "nonneg" else -np.inf for s in self.signs])
        hi = np.array([0.0 if s == "nonpos" else np.inf for s in self.signs])
        combos = itertools.combinations(range(len(rows)), q - 1)
        k = q - 1
        while True:
            block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp).reshape(-1, k)
            if len(block) == 0:
                break
            M = rows[block]  # (b, k, q)
            _, s, vt = np.linalg.svd(M, full_matrices=True)
            rank_ok = s[:, -1] > 1e-10 if k > 0 else np.ones(len(block), bool)
            if not rank_ok.any():
                continue
            block, M, vt = block[rank_ok], M[rank_ok], vt[rank_ok]
            r = vt[:, -1, :]  # (b, q)
            pinv = np.linalg.pinv(M)  # (b, q, k)
            data_mask = is_data[block]  # (b, k)
            patterns = np.array(list(itertools.product((1.0, -1.0), repeat=k))).reshape(-1, k)
            for orient in (1.0, -1.0):
                r0 = orient * r
                base = r0 @ An.T  # (b, m)
                for pat in patterns:
                    target = np.where(data_mask, pat[None, :], 0.0)
                    delta = np.einsum("bqk,bk->bq", pinv, target)
                    dA = delta @ An.T
                    tight = np.abs(base) <= 1e-10
                    big = np.where(tight, np.inf, np.abs(base)).min(axis=1)
                    big = np.where(np.isfinite(big), big, 1.0)
                    dmax = np.where(tight, 0.0, np.abs(dA)).max(axis=1)
                    eps = np.where(dmax > 0, 0.5 * big / np.maximum(dmax, 1e-300), 1.0)
                    eps = np.minimum(eps, 1.0)
                    beta = r0 + eps[:, None] * delta
                    beta = np.where(np.abs(beta) < 1e-13, 0.0, beta)
                    ok = np.all((beta >= lo) & (beta <= hi), axis=1)
                    if not ok.any():
                        continue
                    beta = beta[ok]
                    assign = (beta @ A.T) >= 0  # (b', m)
                    for bvec, a in zip(beta, assign):
                        add(bvec, a)
        self._betas = betas
        self._patterns = pats

    def __len__(self) -> int:
        return len(self._betas)

    def rule(self, k: int) -> StageRule:
        if k == 0:
            if not self._has_zero:
                raise IndexError("candidate 0 is not admitted by this class")
            return _const_rule(self.stage, 0)
        if k == 1:
            return _const_rule(self.stage, 1)
        return self._linear(self._betas[k])

    def admissible_mask(self) -> np.ndarray:
        mask = np.ones(len(self), bool)
        mask[0] = self._has_zero
        return mask

    def _unique_totals(self, Vu):
        out = np.empty(len(self))
        out[0] = 0.0
        out[1] = Vu.sum()
        if len(self) > 2:
            Z = np.array(self._patterns[2:], dtype=float)
            out[2:] = Z @ Vu
        return out

    def dichotomies(self) -> set:
        H = self._rule_input()
        start = 0 if self._has_zero else 1
        return {tuple(self.rule(k).assign(H).tolist()) for k in range(start, len(self))}


def enumerate_candidates(
    features,
    cls: Union[Constants, LinearClass],
    stage: int = 1,
    max_subsets: int = DEFAULT_MAX_SUBSETS,
) -> CandidateSet:
    """Candidate rules for one stage.

    Parameters
    ----------
    features : array (n, p)
        For a linear class, the history columns named by ``cls.selector``
        (in that order).  Ignored except for its row count for constants.
    cls : Constants or LinearClass
    stage : int
        Stage tag of the produced rules.
    max_subsets : int
        Budget for the general enumerator.

    Returns
    -------
    CandidateSet
        Index 0 is the treat-nobody rule (when admitted), index 1 treat-all.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if n == 0:
        raise ValueError("cannot enumerate candidates over an empty sample")
    if isinstance(cls, Constants) or (isinstance(cls, LinearClass) and not cls.selector):
        vals = (0, 1)
        if isinstance(cls, LinearClass) and cls.signs[0] == "nonneg":
            vals = (1,)
        return ConstantCandidates(stage, n, vals)
    p = len(cls.selector)
    if X.shape[1] != p:
        raise ValueError(f"features have {X.shape[1]} columns, class selects {p}")
    intercept_free = cls.signs[0] == "free"
    if p == 1 and intercept_free:
        return ThresholdCandidates(stage, X, cls.selector, cls.signs[1])
    if p == 2 and not cls.constrained:
        return SweepCandidates(stage, X, cls.selector)
    return EnumeratedCandidates(stage, X, cls.selector, cls.signs, max_subsets)


# argmax ---------------------------------------------------------------------------------


def tie_tolerance(weights) -> float:
    """Values within this distance of the maximum count as tied."""
    return 1e-10 * (float(np.sum(np.abs(weights))) + 1e-300)


def best_index(values: np.ndarray, mask: Optional[np.ndarray] = None, tol: float = 0.0) -> int:
    """Lowest index whose value is within ``tol`` of the masked maximum, or -1."""
    v = np.asarray(values, dtype=float)
    if mask is not None:
        v = np.where(mask, v, -np.inf)
    top = v.max() if len(v) else -np.inf
    if not np.isfinite(top):
        return -1
    return int(np.flatnonzero(v >= top - tol)[0])


def argmax_weighted_rule(
    cands: CandidateSet,
    weights,
    feasible: Union[None, np.ndarray, Callable[[StageRule], bool]] = None,
):
    """Feasible candidate maximising ``sum_i w_i g(H_i)``.

    ``feasible`` is either a boolean mask over candidates or a predicate on
    rules.  Ties (within :func:`tie_tolerance`) go to the lowest index.

    Returns
    -------
    (StageRule, float)

    Raises
    ------
    NoFeasibleCandidate
    """
    w = np.asarray(weights, dtype=float)
    vals = cands.totals(w)
    tol = tie_tolerance(w)
    mask = np.ones(len(vals), bool)
    if isinstance(cands, EnumeratedCandidates):
        mask &= cands.admissible_mask()
    if feasible is not None and not callable(feasible):
        mask &= np.asarray(feasible, bool)
        feasible = None
    while True:
        k = best_index(vals, mask, tol)
        if k < 0:
            raise NoFeasibleCandidate("no candidate rule satisfies the feasibility filter")
        rule = cands.rule(k)
        if feasible is None or feasible(rule):
            return rule, float(vals[k])
        mask[k] = False
