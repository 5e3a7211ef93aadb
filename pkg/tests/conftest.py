import time

import pytest

from latentood.pipeline import RunConfig, run_pipeline

# criterion number -> (passed, detail), filled in by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ok, prev = ACCEPTANCE.get(criterion, (True, ""))
    ACCEPTANCE[criterion] = (ok and passed, f"{prev}; {detail}" if prev else detail)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory):
    """One full default toy run shared by every test that needs a trained model."""
    out = tmp_path_factory.mktemp("toy_run")
    start = time.perf_counter()
    report = run_pipeline(RunConfig(out_dir=str(out)))
    return {"dir": out, "report": report, "body": report.body, "start": start, "wall": time.perf_counter() - start}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} ({detail})")
