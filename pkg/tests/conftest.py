import time

import pytest
import torch

from patsnd.encoder import HashedTrigramEncoder
from patsnd.relclf import train_relation_classifier
from patsnd.synthetic import generate_benchmark
from patsnd.training import TrainConfig, train

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def bench():
    return generate_benchmark(seed=0)


@pytest.fixture(scope="session")
def fallback_encoder():
    return HashedTrigramEncoder()


@pytest.fixture(scope="session")
def pipeline(bench, fallback_encoder):
    """Train classifier and scorer on the synthetic benchmark on one thread, timing the whole run."""
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        start = time.perf_counter()
        encoder = HashedTrigramEncoder()  # cold cache, so encoding time is counted
        config = TrainConfig(seed=0)
        clf = train_relation_classifier(bench.train, encoder, config, relations=bench.kb.relation_ids)
        model, history = train([i.triple for i in bench.train], bench.kb, encoder, config)
        seconds = time.perf_counter() - start
    finally:
        torch.set_num_threads(threads)
    return {"model": model, "history": history, "classifier": clf, "encoder": encoder, "train_seconds": seconds}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or "::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        name = report.nodeid.split("::")[-1]
        _ACCEPTANCE[name] = (report.outcome, props.get("criterion", name), props.get("measured", ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        outcome, title, measured = _ACCEPTANCE[name]
        tag = "PASS" if outcome == "passed" else "FAIL"
        line = f"{tag}  {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
