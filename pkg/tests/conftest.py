import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from knitc.instructions import NUM_INSTRUCTIONS, InstructionMap


@st.composite
def instruction_maps(draw, max_width=8, max_height=8):
    w = draw(st.integers(1, max_width))
    h = draw(st.integers(1, max_height))
    cells = draw(st.lists(st.integers(0, NUM_INSTRUCTIONS - 1), min_size=w * h, max_size=w * h))
    return InstructionMap(np.array(cells).reshape(h, w))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if module is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 14):
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
