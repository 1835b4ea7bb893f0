import numpy as np
import pytest

from spectralqc.hilbert import Space, product_state

# acceptance outcomes, filled by test_acceptance.py and echoed after the run
ACCEPTANCE: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE.setdefault(criterion, []).append((passed, line))
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        results = ACCEPTANCE[k]
        ok = all(p for p, _ in results)
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}")
        for _, line in results:
            terminalreporter.write_line(f"    {line}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def storage_pair(control_amps, target_amps, cavity_dim=2):
    """Two-atom state with atom 0 as target and atom 1 as control."""
    return product_state(Space(2, cavity_dim), [target_amps, control_amps])


def brute_force_guarded_pairs(n: int) -> int:
    """Largest set of neighbour pairs on ``n`` channels with an idle channel between any two."""
    best = 0
    for mask in range(1 << (n - 1)):
        # bit i selects pair (i, i+1); selected bits must be at least 3 apart
        if mask & (mask >> 1) or mask & (mask >> 2):
            continue
        best = max(best, bin(mask).count("1"))
    return best
