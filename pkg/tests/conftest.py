import time

import numpy as np
import pytest

from pssrlab import pssr
from pssrlab import rankmos as rm
from pssrlab import srqa_net as qn
from pssrlab.degradation import DegradationSpec, build_catalog, make_versions
from pssrlab.stereo_image import gen_scene

# criterion id -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ------------------------------------------------------ shared desk-scale setup

@pytest.fixture(scope="session")
def desk_db():
    """8 synthetic 120x120 scenes, the 27-version catalog and their rankMOS labels."""
    t0 = time.perf_counter()
    scenes = [gen_scene(100 + i, 120, 120, 3, 8) for i in range(8)]
    catalog = build_catalog()
    versions = [make_versions(s, catalog, i) for i, s in enumerate(scenes)]
    _, mos = rm.synthesize(scenes, versions)
    return scenes, versions, mos, time.perf_counter() - t0


@pytest.fixture(scope="session")
def desk_qa(desk_db):
    """QA trained on references 0-6; reference 7 is held out."""
    scenes, versions, mos, _ = desk_db
    t0 = time.perf_counter()
    train = [(versions[i][j], mos.rankmos[i, j]) for i in range(7) for j in range(27)]
    dataset = qn.patch_dataset([p for p, _ in train], [z for _, z in train])
    model = qn.init_qa(seed=0)
    result = qn.qa_train(model, dataset, epochs=30, seed=0, batch_size=8, lr=1e-4)
    return model, result, time.perf_counter() - t0


@pytest.fixture(scope="session")
def sr_runs(desk_qa):
    """MSE-only and IQP SR models trained with identical seeds and data."""
    qa = desk_qa[0]
    qa_before = qa.state()
    train = [gen_scene(200 + i, 160, 160, 3, 8) for i in range(4)]
    spec = DegradationSpec(scale=4, seed=7)
    out = {}
    t0 = time.perf_counter()
    for name, lambdas in (("mse", (1.0, 0.0, 0.0)), ("iqp", pssr.LAMBDAS)):
        model = pssr.init_sr(seed=0)
        res = pssr.train_sr(model, qa, train, spec, epochs=50, seed=1, lambdas=lambdas, lr=1e-4)
        out[name] = (model, res)
    held_out = [gen_scene(300 + i, 120, 120, 3, 8) for i in range(3)]
    rows = pssr.eval_sr({n: pssr.model_runner(m) for n, (m, _) in out.items()}, held_out, [spec], qa)
    summary = {r[0]: r for r in pssr.summarize(rows)}
    return out, summary, qa_before, time.perf_counter() - t0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if passed else 'FAIL'}  {detail}")
