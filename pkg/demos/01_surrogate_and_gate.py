"""The composite surrogate and the gate, on a 1-D toy you can read end to end.

A cheap oracle reports a scaled-and-biased version of the truth. The
surrogate learns the scale (rho), the discrepancy GP soaks up the bias, and
the gate fires exactly where the discrepancy still dominates the composite
uncertainty.
"""

import numpy as np

from labo.bench import make_synthetic_task
from labo.koh import build_surrogate, composite_posterior, gating_ratio
from labo.oracle import Biased, RealObjectiveOracle
from labo.space import Fidelity, FidelityDataset, Observation

task = make_synthetic_task("forrester1d")
truth = task.resolve_objective()
cheap = task.make_low_fidelity(Biased(amplitude=1.5))

# warm data: cheap predictions cover the interval, expensive measurements
# exist at three points only (which also carry cheap predictions, keeping
# every real x paired)
ds = FidelityDataset(task.space)
measured = (0.15, 0.5, 0.85)
xs_cheap = list(np.linspace(0.02, 0.98, 18)) + list(measured)
for x in xs_cheap:
    y = cheap.evaluate_batch([[x]])[0]
    y = float(np.clip(y, task.space.y_min, task.space.y_max))
    ds = ds.insert(Observation((float(x),), y, Fidelity.LLM))
for x in measured:
    ds = ds.insert(Observation((x,), float(truth(np.array([x]))), Fidelity.REAL))

surrogate = build_surrogate(ds, seed=0)
print(f"estimated scale rho = {surrogate.rho:.3f}")
print(f"{'x':>5} {'truth':>8} {'mu_R':>8} {'sigma_R':>8} {'p_delta':>8}  gate")
for x in np.linspace(0.05, 0.95, 10):
    mu_r, var_r, *_ = composite_posterior(surrogate, [x])
    mu_raw = float(surrogate.normalizer.destandardize(mu_r))
    sd_raw = float(np.sqrt(surrogate.normalizer.destandardize_var(var_r)))
    p = gating_ratio(surrogate, [x])
    gate = "needs experiment" if p > 0.75 else "llm accepted"
    print(
        f"{x:5.2f} {truth(np.array([x])):8.3f} {mu_raw:8.3f} {sd_raw:8.3f} {p:8.3f}  {gate}"
    )
print("\nnear the measured points the discrepancy is pinned down, so the")
print("gate trusts the cheap oracle; in between it still asks for data.")
