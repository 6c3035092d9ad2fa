"""Command-line interface: ``dewm <subcommand> [flags]``.

Subcommands
-----------
estimate          fit a DTR on a panel CSV and write the result
simulate          draw a dataset from a simulation design
evaluate          score a saved DTR on data (IPW) or on a design (oracle)
export-milp       write a two-stage DEWM problem as an LP file
replicate-table1  run the Monte Carlo grid and print the welfare table

Flag values may also come from a ``--config`` file of ``key = value`` lines
(keys are flag names without the leading dashes).  Command-line flags win
over the file, which wins over built-in defaults.

Exit status is 0 on success, 2 for usage errors and 1 for any other failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from .data import PanelDataset, PanelLoadError, load_panel, write_panel
from .estimators import EstimationConfig, EstimationError, default_alpha, fit, _backward_state, _Problem
from .milp import build_backward_milp, build_simultaneous_milp, write_lp
from .policy import Constants, Intertemporal, LinearClass, PolicyClassSpec, loads_dtr, parse_kv
from .propensity import PropensityFitError, PropensityModel, fit_logistic
from .search import EnumerationBudgetError
from .simlab import DgpSpec, generate_dgp, oracle_welfare, run_monte_carlo
from .welfare import BudgetRow, BudgetSpec, WelfareWeights, welfare_report

METHODS = ("backward", "simultaneous", "qlearning")
CONSTRAINTS = tuple(k.value for k in Intertemporal)


class CliError(Exception):
    """A flag value that parsed but cannot be used."""


# flag value parsers -----------------------------------------------------------------------


def parse_gamma(text: str) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise CliError(f"--gamma: cannot parse {text!r} as a comma list of numbers") from None


def parse_class(text: str, T: int, ds: Optional[PanelDataset] = None) -> PolicyClassSpec:
    """Per-stage class string, stages separated by ``;``.

    Each stage is ``const``, ``linear`` (all history features), or
    ``linear:<j,k,...>`` optionally followed by ``/<sign,...>`` with one sign
    (``free``, ``nonneg``, ``nonpos``) per coefficient, intercept first.
    A single stage entry is reused for every stage.
    """
    parts = [p.strip() for p in text.split(";")]
    if len(parts) == 1:
        parts = parts * T
    if len(parts) != T:
        raise CliError(f"--class: {text!r} has {len(parts)} stage entries, data has {T} stages")
    stages = []
    for t, p in enumerate(parts, start=1):
        if p in ("const", "constant"):
            stages.append(Constants())
            continue
        head, _, rest = p.partition(":")
        if head != "linear":
            raise CliError(f"--class: unknown stage class {p!r}")
        sel_txt, _, sign_txt = rest.partition("/")
        if sel_txt.strip():
            try:
                sel = tuple(int(v) for v in sel_txt.split(","))
            except ValueError:
                raise CliError(f"--class: bad selector {sel_txt!r}") from None
        else:
            if ds is None:
                raise CliError("--class: 'linear' without a selector needs data")
            sel = tuple(range(ds.history_matrix(t).shape[1]))
        signs = tuple(s.strip() for s in sign_txt.split(",")) if sign_txt.strip() else None
        try:
            stages.append(LinearClass(sel, signs))
        except ValueError as exc:
            raise CliError(f"--class: {exc}") from None
    return PolicyClassSpec(tuple(stages))


def parse_budget(tokens: Sequence[str], T: int) -> BudgetRow:
    """``K=<k_1,...,k_T> C=<c>`` (one or two argv tokens)."""
    fields = {}
    for tok in " ".join(tokens).split():
        key, sep, val = tok.partition("=")
        if not sep or key not in ("K", "C"):
            raise CliError(f"--budget: unexpected token {tok!r}; expected K=<list> C=<level>")
        fields[key] = val
    if set(fields) != {"K", "C"}:
        raise CliError("--budget: need both K=<list> and C=<level>")
    try:
        K = tuple(float(v) for v in fields["K"].split(","))
        C = float(fields["C"])
    except ValueError:
        raise CliError(f"--budget: cannot parse {' '.join(tokens)!r}") from None
    if len(K) != T:
        raise CliError(f"--budget: K has {len(K)} entries, data has {T} stages")
    try:
        return BudgetRow(K, C)
    except ValueError as exc:
        raise CliError(f"--budget: {exc}") from None


def parse_propensity(text: str, ds: PanelDataset) -> PropensityModel:
    """``known:<p>`` (or one p per stage) or ``logistic:<sel>;<sel>...``.

    ``logistic:all`` uses every history feature at every stage; an empty
    stage selector fits an intercept only.
    """
    kind, sep, rest = text.partition(":")
    T = ds.stage_count
    if kind == "known" and sep:
        try:
            ps = [float(v) for v in rest.split(",")]
        except ValueError:
            raise CliError(f"--propensity: bad probability in {text!r}") from None
        if len(ps) == 1:
            ps = ps * T
        if len(ps) != T:
            raise CliError(f"--propensity: {len(ps)} probabilities for {T} stages")
        try:
            return PropensityModel.known(ps, T)
        except ValueError as exc:
            raise CliError(f"--propensity: {exc}") from None
    if kind == "logistic" and sep:
        if rest.strip() == "all":
            sels = [tuple(range(ds.history_matrix(t).shape[1])) for t in range(1, T + 1)]
        else:
            parts = rest.split(";")
            if len(parts) == 1:
                parts = parts * T
            if len(parts) != T:
                raise CliError(f"--propensity: {len(parts)} selectors for {T} stages")
            try:
                sels = [tuple(int(v) for v in p.split(",") if v.strip()) for p in parts]
            except ValueError:
                raise CliError(f"--propensity: bad selector in {text!r}") from None
        return fit_logistic(ds, sels)
    raise CliError(f"--propensity: expected known:<p> or logistic:<selector>, got {text!r}")


def resolve_threads(value: Optional[int]) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get("DEWM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise CliError(f"DEWM_THREADS: not an integer: {env!r}") from None
    return os.cpu_count() or 1


# parser -----------------------------------------------------------------------------------------


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dewm", description="Dynamic empirical welfare maximisation.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", required=True)

    def common(sp):
        sp.add_argument("--config", help="file of 'flag = value' lines; command-line flags take precedence")
        sp.add_argument("--seed", type=int, help="random seed (default 0)")
        sp.add_argument("--out", help="output path (default: standard output)")

    def model_flags(sp, methods):
        sp.add_argument("--data", help="panel CSV with columns id,d1,y1,x1_1,...")
        sp.add_argument("--method", choices=methods, help="estimator")
        sp.add_argument("--gamma", help="stage weights, comma list (default: last stage only)")
        sp.add_argument("--class", dest="cls", help="per-stage class, e.g. 'linear:0;linear:0,1' or 'const'")
        sp.add_argument("--constraint", choices=CONSTRAINTS, help="intertemporal restriction (default none)")
        sp.add_argument("--budget", nargs="+", action="append", metavar="SPEC",
                        help="budget row 'K=<k1,...> C=<c>'; repeat for several rows")
        sp.add_argument("--alpha", type=float, help="budget slack; overrides the default from --delta")
        sp.add_argument("--delta", type=float, help="confidence level for the default slack (default 0.05)")
        sp.add_argument("--propensity", help="known:<p> or logistic:<selector>[;<selector>...] or logistic:all")
        sp.add_argument("--demean", type=_on_off, metavar="{on,off}", help="centre outcomes first (default on)")

    e = sub.add_parser("estimate", help="fit a DTR on a dataset")
    common(e)
    model_flags(e, METHODS)
    e.add_argument("--restarts", type=int, help="coordinate-ascent restarts (default 20)")

    s = sub.add_parser("simulate", help="draw a dataset from a simulation design")
    common(s)
    s.add_argument("--dgp", help="design: 1, 2, 3 or remark1")
    s.add_argument("--n", type=int, help="sample size")

    v = sub.add_parser("evaluate", help="score a saved DTR")
    common(v)
    v.add_argument("--dtr", help="DTR file written by 'estimate'")
    v.add_argument("--data", help="panel CSV for IPW evaluation")
    v.add_argument("--propensity", help="propensity for IPW evaluation, as for 'estimate'")
    v.add_argument("--gamma", help="stage weights, comma list (default: last stage only)")
    v.add_argument("--dgp", help="design for oracle evaluation instead of --data")
    v.add_argument("--n-eval", type=int, help="oracle draws (default 3000)")

    x = sub.add_parser("export-milp", help="write the DEWM problem as an LP file")
    common(x)
    model_flags(x, ("backward", "simultaneous"))
    x.add_argument("--step", type=int, choices=(1, 2), help="backward step (default 1)")
    x.add_argument("--dtr", help="DTR file whose stage-2 rule fixes backward step 2")

    r = sub.add_parser("replicate-table1", help="run the Monte Carlo welfare table")
    common(r)
    r.add_argument("--reps", type=int, help="replications per cell (default 100)")
    r.add_argument("--n", help="comma list of sample sizes (default 200,400,600)")
    r.add_argument("--dgp", help="comma list of designs (default 1,2,3)")
    r.add_argument("--n-eval", type=int, help="oracle draws per replication (default 3000)")
    r.add_argument("--demean", type=_on_off, metavar="{on,off}", help="centre outcomes for DEWM (default off)")
    r.add_argument("--threads", type=int, help="worker processes (default DEWM_THREADS or all cores)")
    r.add_argument("--csv", help="also write per-replication records here")
    r.add_argument("--restarts", type=int, help="coordinate-ascent restarts (default 20)")
    return p


_DEFAULTS = {
    "seed": 0, "constraint": "none", "delta": 0.05, "demean": None, "restarts": 20,
    "step": 1, "n_eval": 3000, "reps": 100, "n": None, "dgp": None,
}


def _apply_config(ns: argparse.Namespace, parser: argparse.ArgumentParser) -> None:
    """Fill unset flags from ``--config`` and then from built-in defaults."""
    if ns.config:
        try:
            kv = parse_kv(Path(ns.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"--config: cannot read {ns.config}: {exc.strerror}") from None
        sub_actions = {}
        for a in parser._subparsers._group_actions[0].choices[ns.command]._actions:
            for opt in a.option_strings:
                sub_actions[opt.lstrip("-")] = a
        for key, val in kv.items():
            a = sub_actions.get(key)
            if a is None or key in ("config", "help"):
                raise CliError(f"--config: unknown key {key!r}")
            if getattr(ns, a.dest) is not None:
                continue
            if a.dest == "budget":
                setattr(ns, a.dest, [val.split()])
            elif a.type is not None:
                try:
                    setattr(ns, a.dest, a.type(val))
                except (ValueError, argparse.ArgumentTypeError):
                    raise CliError(f"--config: bad value for {key}: {val!r}") from None
            else:
                if a.choices and val not in a.choices:
                    raise CliError(f"--config: {key} must be one of {list(a.choices)}, got {val!r}")
                setattr(ns, a.dest, val)
    for k, v in _DEFAULTS.items():
        if getattr(ns, k, "absent") is None:
            setattr(ns, k, v)


# commands -----------------------------------------------------------------------------------------


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load(path: Optional[str]) -> PanelDataset:
    if not path:
        raise CliError("--data is required")
    try:
        return load_panel(path)
    except OSError as exc:
        raise CliError(f"--data: cannot read {path}: {exc.strerror}") from None


def _weights(text: Optional[str], T: int) -> WelfareWeights:
    g = parse_gamma(text) if text else (0.0,) * (T - 1) + (1.0,)
    if len(g) != T:
        raise CliError(f"--gamma: {len(g)} weights for {T} stages")
    try:
        return WelfareWeights(g)
    except ValueError as exc:
        raise CliError(f"--gamma: {exc}") from None


def _problem_inputs(ns):
    ds = _load(ns.data)
    T = ds.stage_count
    if not ns.propensity:
        raise CliError("--propensity is required (known:<p> or logistic:<selector>)")
    pm = parse_propensity(ns.propensity, ds)
    w = _weights(ns.gamma, T)
    cls = parse_class(ns.cls or "linear", T, ds)
    cls = PolicyClassSpec(cls.stages, Intertemporal.parse(ns.constraint))
    budget = None
    if ns.budget:
        budget = BudgetSpec(tuple(parse_budget(toks, T) for toks in ns.budget), ns.alpha)
    elif ns.alpha is not None:
        raise CliError("--alpha given without --budget")
    return ds, pm, w, cls, budget


def cmd_estimate(ns) -> None:
    if not ns.method:
        raise CliError("--method is required")
    ds, pm, w, cls, budget = _problem_inputs(ns)
    if budget is not None and ns.method != "simultaneous":
        raise CliError(f"--budget works with --method simultaneous only, not {ns.method}")
    cfg = EstimationConfig(w, cls, budget=budget, delta=ns.delta, restarts=ns.restarts, seed=ns.seed)
    demean = True if ns.demean is None else ns.demean
    res = fit(ns.method, ds, pm, cfg, demean=demean and ns.method != "qlearning")
    _emit(res.dumps(), ns.out)


def cmd_simulate(ns) -> None:
    if ns.dgp is None or ns.n is None:
        raise CliError("simulate needs --dgp and --n")
    try:
        spec = DgpSpec.parse(ns.dgp)
    except ValueError as exc:
        raise CliError(f"--dgp: {exc}") from None
    if ns.n < 1:
        raise CliError(f"--n: must be positive, got {ns.n}")
    ds = generate_dgp(spec, ns.n, ns.seed)
    if ns.out:
        write_panel(ds, ns.out)
    else:
        import tempfile

        with tempfile.TemporaryDirectory() as d:
            f = Path(d) / "panel.csv"
            write_panel(ds, f)
            sys.stdout.write(f.read_text(encoding="utf-8"))


def cmd_evaluate(ns) -> None:
    if not ns.dtr:
        raise CliError("--dtr is required")
    try:
        dtr = loads_dtr(Path(ns.dtr).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CliError(f"--dtr: cannot read {ns.dtr}: {exc.strerror}") from None
    if (ns.data is None) == (ns.dgp is None):
        raise CliError("evaluate needs exactly one of --data and --dgp")
    if ns.dgp is not None:
        spec = DgpSpec.parse(ns.dgp)
        gamma = _weights(ns.gamma, spec.stage_count) if ns.gamma else None
        val = oracle_welfare(dtr, spec, ns.n_eval, ns.seed, gamma)
        _emit(f'{{"oracle_welfare": {val!r}, "dgp": "{spec.id}", "n_eval": {ns.n_eval}, "seed": {ns.seed}}}\n', ns.out)
        return
    ds = _load(ns.data)
    if not ns.propensity:
        raise CliError("--propensity is required with --data")
    pm = parse_propensity(ns.propensity, ds)
    rep = welfare_report(ds, dtr, pm, _weights(ns.gamma, ds.stage_count))
    _emit(rep.to_json() + "\n", ns.out)


def cmd_export_milp(ns) -> None:
    if not ns.method:
        raise CliError("--method is required")
    ds, pm, w, cls, budget = _problem_inputs(ns)
    if ns.method == "simultaneous":
        alpha = None
        if budget is not None:
            alpha = budget.alpha if budget.alpha is not None else default_alpha(budget.B, ns.delta, ds.n)
        model = build_simultaneous_milp(ds, pm, w, budget, class_spec=cls, alpha=alpha)
    else:
        if budget is not None:
            raise CliError("--budget works with --method simultaneous only")
        g2 = None
        if ns.step == 2:
            if ns.dtr:
                g2 = loads_dtr(Path(ns.dtr).read_text(encoding="utf-8"))[2]
            else:
                cfg = EstimationConfig(w, cls, seed=ns.seed)
                prob = _Problem(ds, pm, cfg)
                g2 = prob.dtr(_backward_state(prob))[2]
        model = build_backward_milp(ds, pm, w, ns.step, g2, class_spec=cls)
    _emit(write_lp(model), ns.out)


def cmd_replicate(ns) -> None:
    try:
        ns_list = [int(v) for v in (ns.n or "200,400,600").split(",")]
        specs = [DgpSpec.parse(v) for v in (ns.dgp or "1,2,3").split(",")]
    except ValueError as exc:
        raise CliError(f"replicate-table1: {exc}") from None
    threads = resolve_threads(ns.threads)
    demean = False if ns.demean is None else ns.demean
    rep = run_monte_carlo(
        ["qlearning", "backward", "simultaneous"], specs, ns_list, ns.reps,
        n_eval=ns.n_eval, seed=ns.seed, demean=demean, threads=threads, restarts=ns.restarts,
    )
    text = rep.to_text()
    text += f"note: DEWM outcomes {'demeaned' if demean else 'raw'}; Q-learning outcomes raw\n"
    _emit(text, ns.out)
    if ns.csv:
        Path(ns.csv).write_text(rep.to_csv(), encoding="utf-8")


_COMMANDS = {
    "estimate": cmd_estimate,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "export-milp": cmd_export_milp,
    "replicate-table1": cmd_replicate,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        _apply_config(ns, parser)
        _COMMANDS[ns.command](ns)
    except (CliError, PanelLoadError, PropensityFitError, EstimationError, EnumerationBudgetError, ValueError) as exc:
        print(f"dewm {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
