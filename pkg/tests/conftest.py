import contextlib

import numpy as np
import pytest
import torch
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

torch.set_num_threads(1)

# (criterion, part) -> (title, passed, detail)
ACCEPTANCE = {}


@contextlib.contextmanager
def criterion(number, title, part=""):
    detail = {}
    key = (number, part)
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE[key] = (title, False, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        print(f"[acceptance {number:>2}] FAIL  {title}")
        raise
    else:
        info = ", ".join(f"{k}={v}" for k, v in detail.items())
        ACCEPTANCE[key] = (title, True, info)
        print(f"[acceptance {number:>2}] PASS  {title}" + (f"  ({info})" if info else ""))


@pytest.fixture
def acceptance():
    return criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, part in sorted(ACCEPTANCE):
        title, ok, info = ACCEPTANCE[number, part]
        line = f"{number:>2}. {'PASS' if ok else 'FAIL'}  {title}"
        if info:
            line += f"  [{info}]"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
