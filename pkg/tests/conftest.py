import hashlib
import json
import os
from pathlib import Path

import pytest

import pcvlab
from pcvlab.sweep import SweepPlan, load_results, run_sweep, save_results

REDUCED_GRID_SEED = 20240501

# modules whose code determines sweep results
_RESULT_MODULES = ("lvgen.py", "pca.py", "stats.py", "validity.py", "sweep.py")


def _source_digest() -> str:
    root = Path(pcvlab.__file__).parent
    h = hashlib.sha256()
    for name in _RESULT_MODULES:
        h.update((root / name).read_bytes())
    return h.hexdigest()[:16]


def reduced_grid_plan() -> SweepPlan:
    """All binary factors x n_latents in {2, 5, 10}, no rotation, 100 simulations per cell, paired."""
    return SweepPlan.from_preset("omnibus-reduced", seed=REDUCED_GRID_SEED)


@pytest.fixture(scope="session")
def reduced_grid(request):
    """Results of the reduced omnibus grid, cached on disk keyed by plan and source.

    The first run takes roughly an hour on one core; ``PCVLAB_WORKERS`` sets the
    process count.
    """
    plan = reduced_grid_plan()
    key = hashlib.sha256(json.dumps(plan.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
    cache = Path(request.config.cache.mkdir("pcvlab")) / f"reduced-{key}-{_source_digest()}"
    done = cache / "COMPLETE"
    if done.exists():
        results = load_results(cache)
        if len(results) == plan.n_cells:
            return plan, results
    workers = int(os.environ.get("PCVLAB_WORKERS", os.cpu_count() or 1))
    results = run_sweep(plan, workers=workers)
    save_results(results, cache)
    done.write_text(str(len(results)))
    return plan, results


_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict(capsys):
    """Record one PASS/FAIL line for an acceptance criterion, print it, then assert."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        _VERDICTS[number] = line
        with capsys.disabled():
            print(f"\n{line}", flush=True)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
