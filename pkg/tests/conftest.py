import logging
import time

import numpy as np
import pytest

from cardiotwin.cohort import PipelineConfig, annotate_mesh, generate_cohort, store_annotations
from cardiotwin.fileio import write_ctmesh
from cardiotwin.geometry import generate_idealized_biventricle, generate_slab
from cardiotwin.reaction import ApdCalibration, ReactionParams

logging.getLogger("cardiotwin").setLevel(logging.ERROR)

# Desk-scale resolution: coarse enough for fast solves, fine enough that the
# mesh clears the 4096-node cohort schema with headroom.
DESK_EDGE = 0.25
DESK_SEED = 7
COHORT_SEED = 11


@pytest.fixture(scope="session")
def biv_mesh():
    return generate_idealized_biventricle(edge_target=DESK_EDGE, seed=DESK_SEED)


@pytest.fixture(scope="session")
def annotated(biv_mesh):
    return annotate_mesh(biv_mesh)


@pytest.fixture(scope="session")
def calibration():
    return ApdCalibration(ReactionParams())


@pytest.fixture(scope="session")
def slab_mesh():
    return generate_slab((5.0, 5.0, 1.0), 0.15)


@pytest.fixture(scope="session")
def desk_cohort(tmp_path_factory, biv_mesh):
    """Full 17-scenario cohort on the desk mesh; returns (dir, wall seconds)."""
    root = tmp_path_factory.mktemp("cohort")
    mesh_path = root / "heart.ctmesh"
    annotated = annotate_mesh(biv_mesh)
    store_annotations(annotated)
    write_ctmesh(mesh_path, biv_mesh)
    out = root / "out"
    t0 = time.time()
    rows = generate_cohort([mesh_path], out, base_seed=COHORT_SEED,
                           pipeline=PipelineConfig(), jobs=1)
    elapsed = time.time() - t0
    assert len(rows) == 17
    return out, elapsed


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


# Acceptance-criterion bookkeeping: one printed PASS/FAIL line per criterion
# in the terminal summary.
ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def criterion_log():
    return ACCEPTANCE_RESULTS


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num, desc, passed in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {status}: {desc}")
