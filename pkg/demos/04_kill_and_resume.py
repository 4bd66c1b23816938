"""Durability: kill a campaign mid-run, resume from disk, get the same run.

Every action appends events and rewrites the snapshot, so the resumed
process continues the RNG stream exactly where the dead one stopped.
"""

import shutil
import tempfile

from labo.acquisition import AcquisitionConfig
from labo.bench import make_synthetic_task
from labo.campaign import Campaign
from labo.engine import LoopConfig
from labo.koh import SurrogateFitConfig

task = make_synthetic_task("forrester1d")
cfg = LoopConfig(
    real_budget_T=8,
    seed=4,
    n_warmup_llm=10,
    max_iterations=6,
    acquisition=AcquisitionConfig(n_starts=6, local_steps=12),
    fit_initial=SurrogateFitConfig(n_restarts=2, line_searches=16),
    fit_refit=SurrogateFitConfig(n_restarts=1, line_searches=10),
)
oracles = {"llm_endpoint": "synthetic:biased:0.1", "auto_real_oracle": "synthetic"}

root_a = tempfile.mkdtemp(prefix="labo-uninterrupted-")
root_b = tempfile.mkdtemp(prefix="labo-interrupted-")

a = Campaign.create(root_a, task, cfg, oracles, campaign_id="run")
a.run_to_completion()

b = Campaign.create(root_b, task, cfg, oracles, campaign_id="run")
b.suggest()
b.suggest()
print("simulating a crash after two iterations...")
del b  # process dies; only the files survive

b2 = Campaign.resume(root_b, "run")
print(f"resumed at iteration {b2.state.run.iteration}, status {b2.state.status.value}")
b2.run_to_completion()

identical = a.state.serialize() == b2.state.serialize()
print(f"resumed final state bit-identical to the uninterrupted run: {identical}")
print(f"best found: {b2.state.run.best_so_far:.5f} at x={b2.state.run.best_x}")

shutil.rmtree(root_a)
shutil.rmtree(root_b)
