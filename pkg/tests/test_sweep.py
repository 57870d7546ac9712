import dataclasses
import json
import math

import numpy as np
import pytest

from pcvlab.lvgen import GeneratorConfig
from pcvlab.sweep import (
    PRESETS,
    CellResult,
    SweepPlan,
    aggregate_csv,
    curve_csv,
    effects_csv,
    factor_effects,
    load_results,
    proxy_curve_replication,
    proxy_curve_variance,
    read_aggregate_csv,
    read_curve_csv,
    read_effects_csv,
    run_cell,
    run_sweep,
    save_results,
    validity_ve_correlation,
)
from pcvlab.validity import ValidityReport

SMALL_BASE = {"n_participants": 150, "n_observed": 30}


def _small_plan(**kw):
    spec = dict(
        factors={"n_latents": [2, 3], "importance": ["Equal", "MonotonicDecreasing"], "weight_scale": ["ZeroMean", "PositiveOnly"]},
        n_simulations=6,
        seed=11,
        base=SMALL_BASE,
        paired=True,
        n_boot=200,
    )
    spec.update(kw)
    return SweepPlan(**spec)


@pytest.fixture(scope="module")
def small():
    plan = _small_plan()
    return plan, run_sweep(plan)


def _dump(results):
    return [json.dumps(r.to_dict(), sort_keys=True) for r in results]


# ---------------------------------------------------------------- plans


def test_preset_cell_counts():
    assert SweepPlan.from_preset("omnibus").n_cells == 4608 == 2 * 3 * 2**8 * 3
    assert SweepPlan.from_preset("omnibus-reduced").n_cells == 1536
    assert SweepPlan.from_preset("omnibus-desk").n_cells == 8
    assert set(PRESETS) == {"omnibus", "omnibus-reduced", "omnibus-desk"}


def test_plan_validation():
    with pytest.raises(ValueError):
        SweepPlan(factors={"n_latent": [2]})
    with pytest.raises(ValueError):
        SweepPlan(factors={"n_latents": []})
    with pytest.raises(ValueError):
        SweepPlan(factors={"n_latents": [0]})
    with pytest.raises(ValueError):
        SweepPlan(factors={"n_latents": [2]}, n_simulations=0)


def test_plan_dict_round_trip():
    plan = _small_plan()
    again = SweepPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
    assert again.to_dict() == plan.to_dict()
    assert [c for _, _, c in again.cells()] == [c for _, _, c in plan.cells()]
    preset = SweepPlan.from_dict({"preset": "omnibus-desk", "seed": 4})
    assert preset.seed == 4 and preset.n_cells == 8


def test_cell_seeds_are_distinct_and_stable():
    plan = _small_plan()
    seeds = [c.seed for _, _, c in plan.cells()]
    assert len(set(seeds)) == len(seeds)
    assert seeds == [c.seed for _, _, c in _small_plan().cells()]
    assert seeds != [c.seed for _, _, c in _small_plan(seed=12).cells()]


# ---------------------------------------------------------------- execution


def test_single_cell_plan():
    plan = SweepPlan(factors={"n_latents": [2]}, n_simulations=10, base=SMALL_BASE, n_boot=100)
    (res,) = run_sweep(plan)
    assert res.ok and res.report.n_simulations == 10
    assert res.matched.shape == (10, 2)


def test_parallel_matches_serial(small):
    plan, serial = small
    assert _dump(run_sweep(plan, workers=3)) == _dump(serial)


def test_cell_order_does_not_matter(small):
    plan, serial = small
    reversed_results = [run_cell(plan, *c) for c in reversed(list(plan.cells()))][::-1]
    assert _dump(reversed_results) == _dump(serial)


def test_failing_cells_are_recorded_and_sweep_continues():
    # five participants cannot support the bootstrap; the other cell runs normally
    plan = SweepPlan(factors={"n_participants": [5, 100]}, n_simulations=3, base={"n_observed": 20}, n_boot=100)
    bad, good = run_sweep(plan)
    assert not bad.ok and "InsufficientSampleError" in bad.error
    assert good.ok
    text = aggregate_csv([bad, good], plan)
    rows = read_aggregate_csv(text)
    assert rows[0]["error"] and not rows[1]["error"]
    # failed cells are excluded from analyses
    assert factor_effects([bad, good]) == []


def test_serialization_round_trip(small, tmp_path):
    _, results = small
    for r in results:
        assert CellResult.from_dict(json.loads(json.dumps(r.to_dict()))).to_dict() == r.to_dict()
    save_results(results, tmp_path)
    assert _dump(load_results(tmp_path)) == _dump(results)


# ---------------------------------------------------------------- factor effects


def test_effects_sorted_and_grand_mean(small):
    _, results = small
    rows = factor_effects(results)
    assert [r.H for r in rows] == sorted((r.H for r in rows), reverse=True)
    assert {r.factor for r in rows} == {"n_latents", "importance", "weight_scale"}
    values = [v for r in results for v in r.slot_validity if not math.isnan(v)]
    grand = float(np.mean(values))
    for row in rows:
        weighted = sum(m * n for m, n in zip(row.level_means, row.level_counts)) / sum(row.level_counts)
        assert weighted == pytest.approx(grand, abs=1e-12)
        assert sum(row.level_counts) == len(values)


def test_single_level_factor_and_single_cell():
    plan = SweepPlan(factors={"n_latents": [2], "link": ["Linear"]}, n_simulations=4, base=SMALL_BASE, n_boot=100)
    results = run_sweep(plan)
    assert factor_effects(results) == []


def test_null_factor_is_rarely_significant():
    # eight cells from one configuration, split into two arbitrary "levels"
    nonsignificant = 0
    for rep in range(20):
        plan = SweepPlan(factors={"n_latents": [3] * 8}, n_simulations=10, seed=rep, base=SMALL_BASE, n_boot=100)
        results = run_sweep(plan)
        relabeled = [dataclasses.replace(r, labels={"control": "A" if r.index < 4 else "B"}) for r in results]
        (row,) = factor_effects(relabeled, ["control"])
        nonsignificant += row.p > 0.05
    assert nonsignificant >= 18


def test_effects_csv_round_trip(small):
    _, results = small
    rows = factor_effects(results)
    back = read_effects_csv(effects_csv(rows))
    assert back == rows
    header = effects_csv(rows).splitlines()[0].split(",")
    assert header[:4] == ["factor", "H", "df", "p"]


# ---------------------------------------------------------------- proxy curves


def test_variance_curve_vacuous_thresholds(small):
    _, results = small
    pts = proxy_curve_variance(results, validity_thresholds=(0.0, 0.6), ve_grid=[0.0, 0.05, 0.99])
    total = sum(1 for r in results for v in r.slot_validity if not math.isnan(v))
    zero_v = [p for p in pts if p.validity_threshold == 0.0 and p.proportion is not None]
    assert zero_v and all(p.proportion == 1.0 for p in zero_v)
    at_zero = next(p for p in pts if p.validity_threshold == 0.6 and p.x_threshold == 0.0)
    assert at_zero.n_selected == total
    passing = sum(1 for r in results for v in r.slot_validity if not math.isnan(v) and v >= 0.6)
    assert at_zero.proportion == pytest.approx(passing / total)
    empty = next(p for p in pts if p.x_threshold == 0.99)
    assert empty.proportion is None and empty.n_selected == 0


def test_replication_curve(small):
    _, results = small
    pts = proxy_curve_replication(results, validity_thresholds=(0.6,), rep_grid=[0.0, 0.5, 1.0])
    total = sum(1 for r in results for v in r.slot_validity if not math.isnan(v))
    assert pts[0].n_selected == total
    assert [p.x_threshold for p in pts] == [0.0, 0.5, 1.0]


def test_replication_curve_needs_paired_results():
    plan = SweepPlan(factors={"n_latents": [2]}, n_simulations=3, base=SMALL_BASE, n_boot=100)
    with pytest.raises(ValueError, match="paired"):
        proxy_curve_replication(run_sweep(plan))


def test_curve_csv_round_trip(small):
    _, results = small
    pts = proxy_curve_variance(results, ve_grid=[0.0, 0.1, 0.99])
    assert read_curve_csv(curve_csv(pts, "variance_explained")) == pts


# ---------------------------------------------------------------- VE correlation


def test_ve_correlation_strata(small):
    _, results = small
    rows = validity_ve_correlation(results)
    assert rows[0]["stratum"] == "pooled"
    assert all(-1 <= r["r"] <= 1 and 0 <= r["p"] <= 1 for r in rows)


def test_constant_validity_stratum_skipped():
    cfg = GeneratorConfig(n_latents=2)
    results = []
    for i in range(4):
        rep = ValidityReport.from_counts([3, 3], [3, 3], 3)
        ve = np.array([[0.1 * (i + 1), 0.05]] * 3)
        results.append(CellResult(i, {"n_latents": "2"}, cfg, rep, np.full(3, 2), np.ones((3, 2), bool), ve))
    assert validity_ve_correlation(results) == []


def test_aggregate_csv_parses(small):
    plan, results = small
    rows = read_aggregate_csv(aggregate_csv(results, plan))
    assert len(rows) == plan.n_cells
    for row, res in zip(rows, results):
        assert int(row["cell"]) == res.index
        assert float(row["average"]) == pytest.approx(res.report.average, abs=1e-15)
