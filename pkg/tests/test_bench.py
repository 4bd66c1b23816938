"""Task registry, CSV ingestion, and the multi-seed experiment runner."""

import csv
import math
import os

import numpy as np
import pytest

from labo.acquisition import AcquisitionConfig
from labo.bench import (
    BoundsViolation,
    MissingColumn,
    NonNumericCell,
    UnknownFunction,
    generate_stand_in_csv,
    iters_to_90,
    load_tabular_task,
    load_task_config,
    make_synthetic_task,
    run_experiment,
    synthetic_ids,
    synthetic_objective,
    tau_sweep,
)
from labo.engine import LoopConfig
from labo.koh import SurrogateFitConfig

FAST = dict(
    acquisition=AcquisitionConfig(n_starts=6, local_steps=10),
    fit_initial=SurrogateFitConfig(n_restarts=2, line_searches=16),
    fit_refit=SurrogateFitConfig(n_restarts=1, line_searches=10),
)


class TestSyntheticObjectives:
    def test_branin_minimizer_value(self):
        # the standard surface at its documented minimizer, negated
        assert synthetic_objective("branin2d", [math.pi, 2.275]) == pytest.approx(
            -0.397887, abs=1e-6
        )

    def test_branin_local_grid_confirms_optimum(self):
        # no nearby point beats the documented minimizer
        best = synthetic_objective("branin2d", [math.pi, 2.275])
        for dx in np.linspace(-0.05, 0.05, 11):
            for dy in np.linspace(-0.05, 0.05, 11):
                v = synthetic_objective("branin2d", [math.pi + dx, 2.275 + dy])
                assert v <= best + 1e-6

    def test_forrester_formula_at_zero(self):
        # formula value (6x-2)^2 sin(12x-4) at 0 is 4 sin(-4); negated objective
        val = synthetic_objective("forrester1d", [0.0])
        assert -val == pytest.approx(4.0 * math.sin(-4.0), abs=1e-9)
        assert -val == pytest.approx(3.02720, abs=1e-5)

    def test_hartmann6_bound_by_random_search(self):
        task = make_synthetic_task("hartmann6d")
        fn = task.resolve_objective()
        assert fn(np.array(task.to_dict()["dims"] and [0.20169, 0.150011, 0.476874, 0.275332, 0.311652, 0.6573])) == pytest.approx(3.322368, abs=1e-5)
        rng = np.random.default_rng(0)
        samples = rng.random((200_000, 6))
        vals = [fn(s) for s in samples[:5000]]  # spot sample; full sweep in acceptance
        assert max(vals) <= 3.322368 + 1e-6

    def test_unknown_function(self):
        with pytest.raises(UnknownFunction):
            synthetic_objective("nope", [0.0])

    def test_ids_registered(self):
        assert synthetic_ids() == ["branin2d", "forrester1d", "hartmann6d"]


class TestTaskConfigs:
    def test_bundled_schemas_load(self):
        for name in ("fullerene", "pce10", "cof", "flow_battery", "p3ht", "sandwich"):
            t = load_task_config(name)
            assert t.name == name

    def test_fullerene_bounds(self):
        t = load_task_config("fullerene")
        dims = {d.name: (d.lower, d.upper) for d in t.space.dims}
        assert dims == {
            "reaction_time": (3.0, 31.0),
            "sultine_conc": (1.5, 6.0),
            "temperature": (100.0, 150.0),
        }

    def test_sandwich_is_20d(self):
        assert load_task_config("sandwich").space.n_dims == 20

    def test_cof_is_14d(self):
        assert load_task_config("cof").space.n_dims == 14


class TestTabularLoading:
    def write_csv(self, path, rows, header=("reaction_time", "sultine_conc", "temperature", "mole_fraction")):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(header)
            w.writerows(rows)

    def test_three_row_pool(self, tmp_path):
        p = tmp_path / "toy.csv"
        rows = [[5.0, 2.0, 120.0, 0.3], [10.0, 3.0, 130.0, 0.6], [20.0, 5.0, 140.0, 0.5]]
        self.write_csv(p, rows)
        task = load_tabular_task(str(p), load_task_config("fullerene"))
        assert task.space.pool.shape == (3, 3)
        fn = task.resolve_objective()
        for r in rows:
            assert fn(np.array(r[:3])) == r[3]
        assert task.known_optimum == 0.6

    def test_missing_target_column(self, tmp_path):
        p = tmp_path / "bad.csv"
        self.write_csv(p, [[5.0, 2.0, 120.0]], header=("reaction_time", "sultine_conc", "temperature"))
        with pytest.raises(MissingColumn):
            load_tabular_task(str(p), load_task_config("fullerene"))

    def test_non_numeric_cell(self, tmp_path):
        p = tmp_path / "bad.csv"
        self.write_csv(p, [[5.0, "x", 120.0, 0.3]])
        with pytest.raises(NonNumericCell) as e:
            load_tabular_task(str(p), load_task_config("fullerene"))
        assert e.value.col == "sultine_conc"

    def test_out_of_bounds_row(self, tmp_path):
        p = tmp_path / "bad.csv"
        self.write_csv(p, [[5.0, 2.0, 120.0, 0.3], [99.0, 2.0, 120.0, 0.4]])
        with pytest.raises(BoundsViolation) as e:
            load_tabular_task(str(p), load_task_config("fullerene"))
        assert e.value.row == 1

    def test_min_sense_negates(self, tmp_path):
        p = tmp_path / "deg.csv"
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["PCE10", "P3HT", "PCBM", "olDTBR", "degradation"])
            w.writerow([0.2, 0.3, 0.4, 0.1, 0.5])
            w.writerow([0.1, 0.2, 0.3, 0.4, 0.2])
        task = load_tabular_task(str(p), load_task_config("pce10"))
        fn = task.resolve_objective()
        assert fn(np.array([0.1, 0.2, 0.3, 0.4])) == -0.2  # lower degradation wins
        assert task.known_optimum == -0.2
        assert task.space.y_min == -0.75 and task.space.y_max == 0.0

    def test_stand_in_generator_roundtrip(self, tmp_path):
        schema = load_task_config("fullerene")
        p = tmp_path / "standin.csv"
        generate_stand_in_csv(schema, 30, seed=1, path=str(p))
        task = load_tabular_task(str(p), schema)
        assert task.space.pool.shape == (30, 3)
        assert np.all(task.pool_targets >= 0.0) and np.all(task.pool_targets <= 1.0)


class TestItersTo90:
    def test_simple_trace(self):
        from labo.engine import IterationRecord

        recs = [
            IterationRecord(1, [], 0.0, 1.0, 0, 0),
            IterationRecord(2, [], 0.0, 8.0, 0, 0),
            IterationRecord(3, [], 0.0, 10.0, 0, 0),
        ]
        assert iters_to_90(recs) == 3.0
        recs[1].best_so_far = 9.5
        assert iters_to_90(recs) == 2.0

    def test_negative_final_is_undefined(self):
        from labo.engine import IterationRecord

        recs = [IterationRecord(1, [], 0.0, -1.0, 0, 0)]
        assert iters_to_90(recs) is None


class TestRunExperiment:
    def cfg(self, **kw):
        base = dict(real_budget_T=6, seed=7, n_warmup_llm=10, max_iterations=5, **FAST)
        base.update(kw)
        return LoopConfig(**base)

    def test_single_seed_flag(self):
        task = make_synthetic_task("forrester1d")
        res = run_experiment(task, ["labo"], 1, self.cfg())
        assert res.single_seed is True
        assert res.aggregate("labo")["final_obj_std"] == 0.0

    def test_seed_isolation_between_methods(self):
        # running more methods must not perturb an existing method's cells
        task = make_synthetic_task("forrester1d")
        res_a = run_experiment(task, ["labo"], 2, self.cfg())
        res_b = run_experiment(task, ["labo", "vanilla"], 2, self.cfg())
        finals_a = [t.final_obj for t in res_a.traces if t.method == "labo"]
        finals_b = [t.final_obj for t in res_b.traces if t.method == "labo"]
        assert finals_a == finals_b

    def test_csv_exports_match_aggregates(self, tmp_path):
        task = make_synthetic_task("forrester1d")
        out = str(tmp_path / "exp")
        res = run_experiment(task, ["labo", "vanilla"], 2, self.cfg(), out_dir=out)
        summary = os.path.join(out, "forrester1d_summary.csv")
        with open(summary) as f:
            rows = list(csv.DictReader(f))
        by_method = {r["method"]: r for r in rows}
        for m in ("labo", "vanilla"):
            agg = res.aggregate(m)
            assert float(by_method[m]["final_obj_mean"]) == pytest.approx(
                agg["final_obj_mean"], abs=1e-9
            )
        # recompute the mean from the per-seed trace files
        finals = []
        for s in range(2):
            with open(os.path.join(out, f"forrester1d_labo_seed{s}_trace.csv")) as f:
                trace = list(csv.DictReader(f))
            finals.append(float(trace[-1]["best_so_far"]))
        assert np.mean(finals) == pytest.approx(res.aggregate("labo")["final_obj_mean"], abs=1e-9)

    def test_scatter_export_shape(self, tmp_path):
        task = make_synthetic_task("forrester1d")
        out = str(tmp_path / "exp2")
        run_experiment(task, ["labo"], 1, self.cfg(), out_dir=out)
        with open(os.path.join(out, "forrester1d_labo_seed0_scatter.csv")) as f:
            rows = list(csv.DictReader(f))
        fids = {r["fidelity"] for r in rows}
        assert fids == {"llm", "real"}
        assert all(0.0 <= float(r["x0"]) <= 1.0 for r in rows)

    def test_parallel_jobs_match_serial(self):
        task = make_synthetic_task("forrester1d")
        res1 = run_experiment(task, ["labo"], 2, self.cfg())
        res2 = run_experiment(task, ["labo"], 2, self.cfg(), jobs=2)
        assert [t.final_obj for t in res1.traces] == [t.final_obj for t in res2.traces]

    def test_tau_sweep_rows(self):
        task = make_synthetic_task("forrester1d")
        rows = tau_sweep(task, [0.6, 0.8], 1, self.cfg())
        assert [r["tau"] for r in rows] == [0.6, 0.8]
        assert all("lr_ratio_mean" in r for r in rows)

    def test_pool_task_runs_and_stays_in_pool(self, tmp_path):
        schema = load_task_config("fullerene")
        p = tmp_path / "standin.csv"
        generate_stand_in_csv(schema, 40, seed=3, path=str(p))
        task = load_tabular_task(str(p), schema)
        res = run_experiment(task, ["labo"], 1, self.cfg(real_budget_T=5))
        trace = res.traces[0]
        assert trace.error is None
        # every evaluated real point is an exact pool row lookup
        fn = task.resolve_objective()
        for r in trace.records:
            for c in r.candidates:
                if c.y_real is not None:
                    assert fn(np.array(c.x_raw)) == c.y_real
