import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from adapter_forge.datasynth import SynthSpec, build_dataset  # noqa: E402
from adapter_forge.harness import RunConfig, prepare_lm  # noqa: E402
from adapter_forge.toystack import ToyLMConfig  # noqa: E402

TINY_SYNTH = SynthSpec(vocab_size=6, feat_dim=8, seed=0)
TINY_LM = ToyLMConfig(n_layers=1, n_heads=2, dim=16, intermediate=32, max_len=256)


@pytest.fixture(scope="session")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("harness")


@pytest.fixture(scope="session")
def tiny_lm(workdir):
    path = workdir / "lm.afck"
    prepare_lm(path, TINY_SYNTH, steps=40, cfg=TINY_LM, corpus_size=400)
    return path


@pytest.fixture(scope="session")
def slow_rate_data(workdir):
    build_dataset(TINY_SYNTH, 60, 6.25, workdir / "data-6.25")
    return workdir / "data-6.25" / "manifest.tsv"


@pytest.fixture(scope="session")
def fast_rate_data(workdir):
    build_dataset(TINY_SYNTH, 40, 50.0, workdir / "data-50")
    return workdir / "data-50" / "manifest.tsv"


@pytest.fixture(scope="session")
def tiny_run(tiny_lm, slow_rate_data):
    return RunConfig(sfm_preset="seamless-like", lm_checkpoint=str(tiny_lm), manifest=str(slow_rate_data),
                     steps=3, micro_batch=4, grad_accum=2, adapter_layers=2, adapter_hidden=16,
                     adapter_intermediate=32, adapter_heads=2, wlq_layers=1)



# --- acceptance summary: one line per criterion -------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    status = "PASS" if rep.passed else "FAIL"
    if rep.when == "setup":
        detail = "setup failed"
    previous = _ACCEPTANCE.get(n)
    if previous is None or previous[1] == "PASS":
        _ACCEPTANCE[n] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, status, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2} {status}  {title}" + (f"  [{detail}]" if detail else ""))
