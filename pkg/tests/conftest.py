import sys
from pathlib import Path

import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from btsync_forensics import bencode  # noqa: E402

BACKENDS = ["python"] + (["cython"] if bencode.BACKEND == "cython" else [])

int64 = st.integers(min_value=bencode.INT64_MIN, max_value=bencode.INT64_MAX)

bvalues = st.recursive(
    st.binary(max_size=24) | int64,
    lambda children: st.lists(children, max_size=5)
    | st.dictionaries(st.binary(max_size=8), children, max_size=5),
    max_leaves=20,
)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


ACCEPTANCE = []


def record_acceptance(number, name, ok, detail=""):
    """Remember one acceptance line; printed together in the terminal summary."""
    line = f"AC{number} {'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s[2:s.index(" ")])):
            terminalreporter.write_line(line)
