"""End-to-end estimation on a simulated experiment.

We draw n = 400 people from DGP 3, fit the three estimators, and score each
fitted rule by fresh simulation.  The last part adds a budget: at most 40%
of people may be treated at the first stage.
"""
from dewm.estimators import EstimationConfig, fit
from dewm.simlab import DgpSpec, generate_dgp, oracle_welfare
from dewm.welfare import BudgetRow, BudgetSpec

spec = DgpSpec.dgp(3)
pm = spec.propensity()
ds = generate_dgp(spec, n=400, seed=11)
cfg = EstimationConfig(spec.gamma, spec.policy_class(), restarts=10, seed=1)

for method in ("qlearning", "backward", "simultaneous"):
    res = fit(method, ds, pm, cfg, demean=method != "qlearning")
    print(f"{method:>12}: oracle welfare {oracle_welfare(res.dtr, spec, 20000, seed=5):.3f}")
    for rule in res.dtr.rules:
        print(f"{'':>14}{rule}")

budget = BudgetSpec((BudgetRow((1.0, 0.0), 0.4),), alpha=0.0)
res = fit("simultaneous", ds, pm, EstimationConfig(spec.gamma, spec.policy_class(), budget=budget, restarts=10))
print(f"with budget: treated shares {tuple(round(s, 3) for s in res.shares)}, "
      f"oracle welfare {oracle_welfare(res.dtr, spec, 20000, seed=5):.3f}")
