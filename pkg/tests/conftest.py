import sys

import pytest

from dialektpipe import synthetic
from dialektpipe.backends import BackendClient, BackendSpec
from dialektpipe.dialect_id import train_nb
from dialektpipe.model import DialectRegion


def stub_client(kind, transport="inproc", max_parallel=1, timeout_s=30.0, **options):
    if transport == "inproc":
        target = "stub"
    else:
        target = f"{sys.executable} -m dialektpipe.backends.stubs {kind}"
    return BackendClient(BackendSpec(kind, transport, target, timeout_s, max_parallel, options))


@pytest.fixture(scope="session")
def did_model():
    corpus = synthetic.phoneme_corpus(list(DialectRegion), 200, 50, seed=0)
    return train_nb(corpus, (1, 2, 3), 1.0)


@pytest.fixture(scope="session")
def eval_inputs(tmp_path_factory):
    return synthetic.make_eval_inputs(tmp_path_factory.mktemp("eval-inputs"))


@pytest.fixture
def catalog_dir(tmp_path):
    return synthetic.make_local_catalog(tmp_path / "corpus")


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)
