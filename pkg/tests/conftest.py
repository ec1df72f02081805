import pytest

from hiformer import tensor


@pytest.fixture(autouse=True, scope="session")
def _finite_checks():
    # catch any NaN/Inf escaping a forward op while the suite runs
    tensor.set_debug_checks(True)
    yield
    tensor.set_debug_checks(False)
