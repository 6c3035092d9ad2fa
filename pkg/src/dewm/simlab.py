"""Simulation designs, oracle welfare and the Monte Carlo driver.

Two families of designs are provided.

``dgp1`` .. ``dgp3``
    Two stages, one baseline covariate ``X_1``, fair-coin treatments and
    normal shocks::

        Y_1 = phi_01 + phi_11 X_1 + (psi_01 + psi_11 X_1) D_1 + U_1
        Y_2 = phi_02 + phi_12 Y_1
              + (psi_02 + psi_12 D_1 + sum_j psi_{j+1,2} Y_1^j) D_2 + U_2

    They differ only in ``(psi_22, psi_32, psi_42)``.  Welfare is the mean
    of ``Y_2`` (``gamma = (0, 1)``).
``remark1``
    Three stages, no covariates, no noise: ``Y_1 = Y_2 = 0`` and ``Y_3`` is a
    fixed function of ``(d_1, d_2, d_3)`` under which backward induction over
    constant rules picks ``(1, 1, 0)`` while ``(1, 1, 1)`` is optimal.
"""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .data import PanelDataset
from .estimators import EstimationConfig, fit
from .policy import Constants, Dtr, LinearClass, PolicyClassSpec
from .propensity import PropensityModel
from .welfare import WelfareWeights

__all__ = [
    "DgpSpec",
    "McRecord",
    "McReport",
    "generate_dgp",
    "oracle_welfare",
    "run_monte_carlo",
    "ESTIMATOR_LABELS",
    "TABLE1",
]

# Remark 1 terminal outcome, keyed by (d1, d2, d3)
_REMARK1_Y3 = {
    (0, 0, 0): 0.2, (1, 0, 0): 0.3, (0, 1, 0): 0.4, (1, 1, 0): 0.5,
    (0, 0, 1): 0.0, (1, 0, 1): 0.0, (0, 1, 1): 0.0, (1, 1, 1): 1.0,
}

ESTIMATOR_LABELS = {"qlearning": "Q-learning", "backward": "B-DEWM", "simultaneous": "S-DEWM"}

# published Monte Carlo means, (estimator, dgp) -> means at n = 200, 400, 600
TABLE1 = {
    ("qlearning", 1): (2.272, 2.284, 2.274),
    ("backward", 1): (2.049, 2.154, 2.148),
    ("simultaneous", 1): (2.006, 2.148, 2.178),
    ("qlearning", 2): (3.969, 3.975, 3.978),
    ("backward", 2): (3.560, 3.711, 3.694),
    ("simultaneous", 2): (3.497, 3.710, 3.737),
    ("qlearning", 3): (1.637, 1.629, 1.626),
    ("backward", 3): (1.765, 1.785, 1.794),
    ("simultaneous", 3): (1.856, 1.888, 1.906),
}


@dataclass(frozen=True)
class DgpSpec:
    """A simulation design.

    ``psi2`` is ``(psi_02, psi_12, psi_22, psi_32, psi_42)``; unused for
    ``remark1``.
    """

    id: str
    phi1: tuple = (0.5, -1.0)
    psi1: tuple = (1.0, 1.5)
    phi2: tuple = (0.5, 0.5)
    psi2: tuple = (0.5, 0.5, 0.0, 0.0, 0.0)
    p_treat: float = 0.5

    @classmethod
    def dgp(cls, k: int) -> "DgpSpec":
        tails = {1: (0.0, 0.0, 0.0), 2: (1.0, 0.0, 0.0), 3: (0.3, 0.3, -0.4)}
        if k not in tails:
            raise ValueError(f"unknown design dgp{k}; expected 1, 2 or 3")
        return cls(id=f"dgp{k}", psi2=(0.5, 0.5) + tails[k])

    @classmethod
    def remark1(cls) -> "DgpSpec":
        return cls(id="remark1")

    @classmethod
    def parse(cls, text) -> "DgpSpec":
        s = str(text).strip().lower()
        if s in ("remark1", "r1"):
            return cls.remark1()
        s = s.removeprefix("dgp")
        try:
            return cls.dgp(int(s))
        except ValueError:
            raise ValueError(f"unknown design {text!r}; use 1, 2, 3 or remark1") from None

    @property
    def index(self) -> int:
        return 0 if self.id == "remark1" else int(self.id[3:])

    @property
    def stage_count(self) -> int:
        return 3 if self.id == "remark1" else 2

    @property
    def covariate_dims(self) -> tuple:
        return (0, 0, 0) if self.id == "remark1" else (1, 0)

    @property
    def gamma(self) -> WelfareWeights:
        return WelfareWeights((0.0, 0.0, 1.0) if self.id == "remark1" else (0.0, 1.0))

    def policy_class(self, intertemporal="none") -> PolicyClassSpec:
        """Constant rules for ``remark1``; linear rules over ``x_1`` and ``(d_1, y_1)`` otherwise."""
        if self.id == "remark1":
            return PolicyClassSpec.constants(3, intertemporal)
        return PolicyClassSpec((LinearClass((0,)), LinearClass((0, 1))), intertemporal)

    def propensity(self) -> PropensityModel:
        return PropensityModel.known(self.p_treat, self.stage_count)

    # structural equations -------------------------------------------------------
    def y1(self, x1, d1, u1):
        (f0, f1), (p0, p1) = self.phi1, self.psi1
        return f0 + f1 * x1 + (p0 + p1 * x1) * d1 + u1

    def y2(self, y1, d1, d2, u2):
        f0, f1 = self.phi2
        p0, p1, p2, p3, p4 = self.psi2
        effect = p0 + p1 * d1 + p2 * y1 + p3 * y1**2 + p4 * y1**3
        return f0 + f1 * y1 + effect * d2 + u2


def _remark1_y3(d1, d2, d3):
    table = np.zeros((2, 2, 2))
    for (a, b, c), v in _REMARK1_Y3.items():
        table[a, b, c] = v
    return table[d1, d2, d3]


def generate_dgp(spec: DgpSpec, n: int, seed, assignment: Optional[PropensityModel] = None) -> PanelDataset:
    """Draw a panel of size ``n``; deterministic in ``seed``.

    Treatments are fair-coin (``p_treat``) draws unless ``assignment`` gives
    history-dependent treatment probabilities, which turns the design into
    an observational one with the same structural equations.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    if spec.id == "remark1":
        if assignment is not None:
            raise ValueError("the remark1 design has fixed fair-coin treatments")
        D = (rng.random((n, 3)) < spec.p_treat).astype(np.int8)
        Y = np.zeros((n, 3))
        Y[:, 2] = _remark1_y3(D[:, 0], D[:, 1], D[:, 2])
        return PanelDataset(D, Y, [np.zeros((n, 0))] * 3)
    x1 = rng.standard_normal(n)
    u1 = rng.standard_normal(n)
    u2 = rng.standard_normal(n)
    draws = rng.random((n, 2))
    if assignment is None:
        D = (draws < spec.p_treat).astype(np.int8)
        y1 = spec.y1(x1, D[:, 0], u1)
    else:
        if assignment.stage_count != 2:
            raise ValueError("assignment model must cover the two stages of a dgp design")
        D = np.zeros((n, 2), dtype=np.int8)
        D[:, 0] = draws[:, 0] < assignment.treat_prob(1, x1[:, None])
        y1 = spec.y1(x1, D[:, 0], u1)
        D[:, 1] = draws[:, 1] < assignment.treat_prob(2, np.column_stack([D[:, 0], y1, x1]))
    y2 = spec.y2(y1, D[:, 0], D[:, 1], u2)
    return PanelDataset(D, np.column_stack([y1, y2]), [x1[:, None], np.zeros((n, 0))])


def oracle_welfare(dtr: Dtr, spec: DgpSpec, n_eval: int = 3000, seed=None, gamma=None) -> float:
    """Population welfare of ``dtr`` by simulating ``n_eval`` fresh individuals.

    Treatments follow the regime along each simulated path; histories are
    built in the same canonical order as the data.  The ``remark1`` design
    has no noise, so its value is exact for any ``n_eval``.
    """
    w = spec.gamma if gamma is None else gamma
    g = w.as_array()
    if dtr.stage_count != spec.stage_count:
        raise ValueError("regime and design have different numbers of stages")
    if not np.any(g):
        return 0.0
    if spec.id == "remark1":
        n = 1
        D = np.zeros((n, 3), dtype=np.int8)
        Y = np.zeros((n, 3))
        for t in range(1, 4):
            H = np.column_stack([D[:, : t - 1], Y[:, : t - 1]]) if t > 1 else np.zeros((n, 0))
            D[:, t - 1] = dtr[t].assign(H)
        Y[:, 2] = _remark1_y3(D[:, 0], D[:, 1], D[:, 2])
        return float(Y[0] @ g)
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n_eval)
    u1 = rng.standard_normal(n_eval)
    u2 = rng.standard_normal(n_eval)
    d1 = dtr[1].assign(x1[:, None]).astype(float)
    y1 = spec.y1(x1, d1, u1)
    H2 = np.column_stack([d1, y1, x1])
    d2 = dtr[2].assign(H2).astype(float)
    y2 = spec.y2(y1, d1, d2, u2)
    return float(np.mean(g[0] * y1 + g[1] * y2))


# Monte Carlo ---------------------------------------------------------------------------


@dataclass(frozen=True)
class McRecord:
    estimator: str
    dgp: str
    n: int
    rep: int
    welfare: float
    seed: str


@dataclass
class McReport:
    """Per-replication oracle welfares with cell summaries."""

    records: list
    master_seed: int
    n_eval: int
    flags: list = field(default_factory=list)

    def cells(self) -> dict:
        out: dict = {}
        for r in sorted(self.records, key=lambda r: (r.estimator, r.dgp, r.n, r.rep)):
            out.setdefault((r.estimator, r.dgp, r.n), []).append(r.welfare)
        return out

    def summary(self, estimator: str, dgp: str, n: int) -> dict:
        vals = np.array(self.cells()[(estimator, dgp, n)])
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return {
            "mean": float(np.mean(vals)),
            "median": float(np.median(vals)),
            "sd": sd,
            "reps": len(vals),
            "single_rep": len(vals) == 1,
        }

    def mean(self, estimator: str, dgp, n: int) -> float:
        key = dgp if isinstance(dgp, str) else f"dgp{dgp}"
        return self.summary(estimator, key, n)["mean"]

    def to_text(self) -> str:
        """Table with one row per (estimator, design) and mean/median/SD per sample size."""
        cells = self.cells()
        ns = sorted({k[2] for k in cells})
        dgps = sorted({k[1] for k in cells})
        ests = [e for e in ESTIMATOR_LABELS if any(k[0] == e for k in cells)]
        head1 = f"{'':<12}{'DGP':>8}" + "".join(f"{'n=' + str(n):^27}" for n in ns)
        head2 = f"{'':<12}{'':>8}" + "".join(f"{'Mean':>9}{'Median':>9}{'SD':>9}" for _ in ns)
        lines = [head1, head2, "-" * len(head2)]
        for dgp in dgps:
            for est in ests:
                row = f"{ESTIMATOR_LABELS[est]:<12}{dgp:>8}"
                for n in ns:
                    if (est, dgp, n) in cells:
                        s = self.summary(est, dgp, n)
                        row += f"{s['mean']:9.3f}{s['median']:9.3f}{s['sd']:9.3f}"
                    else:
                        row += f"{'':>27}"
                lines.append(row)
        reps = sorted({len(v) for v in cells.values()})
        lines.append("")
        lines.append(
            f"replications per cell: {', '.join(map(str, reps))}; oracle draws: {self.n_eval}; "
            f"master seed: {self.master_seed}"
        )
        for f in self.flags:
            lines.append(f"note: {f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["estimator", "dgp", "n", "rep", "welfare", "seed"])
        for r in sorted(self.records, key=lambda r: (r.estimator, r.dgp, r.n, r.rep)):
            w.writerow([r.estimator, r.dgp, r.n, r.rep, repr(r.welfare), r.seed])
        return buf.getvalue()


def _seed_words(master: int, spec: DgpSpec, n: int, rep: int, stream: int) -> list:
    return [int(master), spec.index, int(n), int(rep), stream]


def _one_replication(args):
    estimators, spec, n, rep, master, n_eval, demean, restarts = args
    data_words = _seed_words(master, spec, n, rep, 0)
    eval_words = _seed_words(master, spec, n, rep, 1)
    ds = generate_dgp(spec, n, np.random.SeedSequence(data_words))
    pm = spec.propensity()
    cfg = EstimationConfig(
        weights=spec.gamma,
        class_spec=spec.policy_class(),
        restarts=restarts,
        seed=int(np.random.SeedSequence(data_words + [2]).generate_state(1)[0]),
    )
    out = []
    for est in estimators:
        use_demean = demean and est != "qlearning"
        res = fit(est, ds, pm, cfg, demean=use_demean)
        val = oracle_welfare(res.raw_dtr, spec, n_eval, np.random.SeedSequence(eval_words))
        seed_txt = "-".join(map(str, data_words))
        out.append(McRecord(est, spec.id, n, rep, val, seed_txt))
    return out


def run_monte_carlo(
    estimators: Sequence[str],
    specs: Sequence[DgpSpec],
    ns: Sequence[int],
    reps: int,
    n_eval: int = 3000,
    seed: int = 0,
    demean: bool = True,
    threads: int = 1,
    restarts: int = 20,
    progress=None,
) -> McReport:
    """Fit every estimator on ``reps`` fresh samples per (design, n) cell.

    Each replication's data and oracle draws come from
    ``SeedSequence([seed, design, n, rep, stream])``, so any cell can be
    reproduced on its own and the result does not depend on ``threads``.
    All estimators in a replication share its data and its oracle draws.
    DEWM fits use demeaned outcomes when ``demean`` is set; Q-learning always
    regresses raw outcomes.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    for e in estimators:
        if e not in ESTIMATOR_LABELS:
            raise ValueError(f"unknown estimator {e!r}")
    tasks = [
        (tuple(estimators), spec, int(n), rep, int(seed), int(n_eval), demean, restarts)
        for spec in specs
        for n in ns
        for rep in range(reps)
    ]
    records = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            for i, res in enumerate(ex.map(_one_replication, tasks, chunksize=4)):
                records.extend(res)
                if progress:
                    progress(i + 1, len(tasks))
    else:
        for i, task in enumerate(tasks):
            try:
                records.extend(_one_replication(task))
            except Exception as exc:
                raise RuntimeError(f"cell {task[1].id} n={task[2]} rep={task[3]} failed: {exc}") from exc
            if progress:
                progress(i + 1, len(tasks))
    flags = ["single replication per cell, SD reported as 0"] if reps == 1 else []
    return McReport(records, int(seed), int(n_eval), flags)
