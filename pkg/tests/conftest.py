import time

import pytest

from inbed_pose.pipeline import STAGES, build_config, run_stage


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """One complete toy-profile run on the phantom fixture, shared by every test that needs trained artifacts."""
    cfg = build_config("toy", seed=0, out=tmp_path_factory.mktemp("toy_run"))
    results, timings = {}, {}
    t0 = time.perf_counter()
    for stage in STAGES:
        t = time.perf_counter()
        results[stage] = run_stage(stage, cfg)
        timings[stage] = time.perf_counter() - t
    return {"cfg": cfg, "results": results, "timings": timings, "elapsed": time.perf_counter() - t0}
