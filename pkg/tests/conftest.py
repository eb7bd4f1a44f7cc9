from __future__ import annotations

from collections import defaultdict

import numpy as np
import pandas as pd
import pytest

from ensoconflict.synth import SynthConfig, gen_world

_CRITERIA: dict[int, list[tuple[str, str]]] = defaultdict(list)
CRITERION_TITLES = {
    1: "effect-formula arithmetic vs reported values (+-0.15 pp)",
    2: "panel dimensions (3,312,252 and 1,075 rows)",
    3: "hdfe_ols vs dense oracle on >= 50 random panels (< 1e-8)",
    4: "Conley degeneracies and hand double sum (1e-12)",
    5: "Monte Carlo recovery and Conley coverage (500 x 120 x 200)",
    6: "teleconnection test size 0.05 +- 0.02 and beta recovery",
    7: "calendar bijection and 3-month masks",
    8: "performance: 1,000 x 324 estimation < 60 s, absorb < 200 iterations",
    9: "end-to-end byte determinism",
}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        _CRITERIA[marker.args[0]].append((item.name, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        ok = all(o == "passed" for _, o in results)
        status = "PASS" if ok else "FAIL"
        detail = "" if ok else "  failing: " + ", ".join(name for name, o in results if o != "passed")
        terminalreporter.write_line(f"criterion {n}: {status}  {CRITERION_TITLES.get(n, '')}{detail}")


@pytest.fixture(scope="session")
def small_world():
    """60 cells, 12 conflict years; fits and design are cached on the object."""
    return gen_world(SynthConfig(n_cells=60, seed=5, weather_window="1989-06:2024-05"))


@pytest.fixture
def toy_cells() -> pd.DataFrame:
    return pd.DataFrame(
        {
            "cell_id": np.array([3, 1, 2], dtype=np.int64),
            "lat": [0.25, 0.25, 0.75],
            "lon": [36.25, 36.75, 36.25],
            "country": ["KEN", "KEN", "UGA"],
            "cropland_ha": [12000.0, 0.0, 5000.0],
            "main_crop": ["maize", "none", "sorghum"],
            "plant_month": pd.array([3, None, 10], dtype="Int64"),
            "harvest_month": pd.array([8, None, 3], dtype="Int64"),
        }
    )
