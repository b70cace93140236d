import pathlib

import pytest

from sailbench import orchestrator, planner, repo, runner

CORPUS = pathlib.Path(__file__).resolve().parent.parent / "src" / "sailbench" / "corpus"
GOLDEN = pathlib.Path(__file__).resolve().parent / "golden"


@pytest.fixture(scope="session")
def corpus_root() -> pathlib.Path:
    return CORPUS


@pytest.fixture(scope="session")
def corpus_repo():
    return repo.scan(CORPUS)


@pytest.fixture(scope="session")
def corpus_plan(corpus_repo):
    return planner.plan(corpus_repo)


@pytest.fixture(scope="session")
def kept_scenarios(corpus_plan):
    return orchestrator.prune(corpus_plan.scenarios).kept


@pytest.fixture(scope="session")
def corpus_run(kept_scenarios, corpus_repo):
    # One shared simulated run; tests that need fresh executions make their own.
    return runner.run_scenarios(
        kept_scenarios, corpus_repo, run_seed=1, mode="simulated", jobs=2
    )
