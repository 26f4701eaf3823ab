"""Shared fixtures and the acceptance summary block.

The terminal summary prints one line per acceptance criterion so a full run
ends with an at-a-glance verdict.
"""

import numpy as np
import pytest


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    entries = []
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL"), ("skipped", "SKIP")):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance" in nodeid and "::" in nodeid:
                entries.append((nodeid.split("::")[-1], label))
    if not entries:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, label in sorted(set(entries)):
        terminalreporter.write_line(f"[{label}] {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
