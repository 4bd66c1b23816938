"""The human-in-the-loop surface, scripted: create, suggest, measure, tell.

Runs the HTTP service in-process. The campaign is configured with no
automatic real oracle, so every needs_experiment candidate waits for a
measured value - here we play the scientist and answer from a hidden
function.
"""

import numpy as np
from fastapi.testclient import TestClient

from labo.service import create_app


def hidden_experiment(x):
    # the "wet lab": something the optimizer never sees directly
    return float(-((6 * x[0] - 2) ** 2) * np.sin(12 * x[0] - 4))


app = create_app("demo-campaigns")
client = TestClient(app)

created = client.post(
    "/campaigns",
    json={
        "task": {
            "name": "bench-chemistry",
            "dims": [{"name": "x", "lower": 0.0, "upper": 1.0}],
            "output_range": {"y_min": -16.0, "y_max": 6.1},
        },
        "config": {"budget": 9, "n_init_real": 3, "n_warmup_llm": 10, "seed": 1},
        "oracle": {"llm_endpoint": "synthetic:random", "auto_real_oracle": "none"},
    },
).json()
cid = created["campaign_id"]
print(f"campaign {cid} status={created['status']}")

# the initial design arrives as pending measurements
pending = created["pending"]
print(f"initial design: {[round(p['x'][0], 3) for p in pending]}")
obs = [{"x": p["x"], "y": hidden_experiment(p["x"])} for p in pending]
out = client.post(f"/campaigns/{cid}/observations", json={"observations": obs}).json()
print(f"told {out['accepted']} measurements; best so far {out['best_so_far']:.4f}")

for round_idx in range(4):
    sug = client.post(f"/campaigns/{cid}/suggest")
    if sug.status_code != 200:
        print("suggest:", sug.json()["code"])
        break
    body = sug.json()
    for c in body["candidates"]:
        print(
            f"  candidate x={c['x'][0]:.3f} y_llm={c['y_llm']:.3f} "
            f"p_delta={c['p_delta']:.3f} -> {c['gate']}"
        )
    if body["pending"]:
        obs = [{"x": p["x"], "y": hidden_experiment(p["x"])} for p in body["pending"]]
        out = client.post(f"/campaigns/{cid}/observations", json={"observations": obs}).json()
        print(
            f"round {round_idx}: measured {out['accepted']}, "
            f"best {out['best_so_far']:.4f}, budget left {out['budget_remaining']}"
        )
        if out["status"] == "finished":
            break

history = client.get(f"/campaigns/{cid}/history").json()
print(f"\nconvergence series: {[round(v, 3) for v in history['convergence']]}")
print(f"final status: {history['status']}")
