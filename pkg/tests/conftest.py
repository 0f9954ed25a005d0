"""Shared fixtures plus the acceptance summary printed at the end of a run."""

import pytest

# criterion number -> (title, passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}
CRITERIA = {
    1: "solver oracle equivalence",
    2: "quantile property of CQR fits",
    3: "pCQR collapse at gamma=0",
    4: "flattening at gamma=1e6",
    5: "sCQR non-crossing",
    6: "gamma search guarantee",
    7: "gamma* concentrated in [0.01, 0.03]",
    8: "MSE ordering pCQR < sCQR",
    9: "coverage error ordering",
    10: "DGP oracles",
    11: "determinism across worker counts",
}


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str = "") -> None:
        ACCEPTANCE[number] = (CRITERIA[number], bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in CRITERIA.items():
        if number in ACCEPTANCE:
            _, passed, detail = ACCEPTANCE[number]
            verdict = "PASS" if passed else "FAIL"
        else:
            verdict, detail = "NOT RUN", ""
        terminalreporter.write_line(f"[{verdict}] {number:2d}. {title}: {detail}")
