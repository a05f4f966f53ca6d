import pytest

from peva import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # JIT compilation is one-time setup; keep it out of timed assertions.
    kernels.warmup()
