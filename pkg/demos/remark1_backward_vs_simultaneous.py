"""Backward induction can miss the best DTR when later rules cannot adapt.

The Remark 1 design has three stages, no noise and rules restricted to
constants.  Backward estimation fixes the last stage first, assuming the
earlier stages behave as in the data, and settles on (1, 1, 0).  Joint
(simultaneous) estimation sees that treating at every stage pays more.

Run with ``python3 demos/remark1_backward_vs_simultaneous.py``.
"""
from dewm.estimators import EstimationConfig, fit_backward, fit_simultaneous
from dewm.simlab import DgpSpec, generate_dgp, oracle_welfare

spec = DgpSpec.remark1()
ds = generate_dgp(spec, n=20000, seed=0)
cfg = EstimationConfig(spec.gamma, spec.policy_class())

for name, fitter in (("backward", fit_backward), ("simultaneous", fit_simultaneous)):
    res = fitter(ds, spec.propensity(), cfg)
    path = tuple(r.value for r in res.dtr.rules)
    print(f"{name:>12}: treatments {path}, empirical welfare {res.welfare:.3f}, "
          f"oracle welfare {oracle_welfare(res.dtr, spec):.3f}")
