import shutil

import pytest

from helpers import SoundnessRecorder, hemodialysis_model
from reqsmith.solver import SessionPool, SolverConfig

if shutil.which("z3") is None:
    raise pytest.UsageError("the test suite needs the z3 binary on PATH (pip install z3-solver)")


@pytest.fixture(scope="session", autouse=True)
def soundness():
    """Every witness produced during the run must satisfy its query; every core must re-check UNSAT."""
    with SoundnessRecorder() as rec:
        yield rec
    _, failures = rec.recheck_cores()
    assert not rec.witness_failures, f"models falsifying their own assertions: {rec.witness_failures[:3]}"
    assert not failures, f"cores that are satisfiable in isolation: {failures[:3]}"


@pytest.fixture(scope="session")
def hemo():
    return hemodialysis_model()


@pytest.fixture(scope="module")
def hemo_pool(hemo):
    with SessionPool(SolverConfig(), hemo.schema, 4) as pool:
        yield pool
