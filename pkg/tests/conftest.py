import pytest

import latentsr._kernels_py as kernels_py

try:
    import latentsr._kernels_cy as kernels_cy
except ImportError:  # extension not built; fallback-only run
    kernels_cy = None

BACKENDS = [pytest.param(kernels_py, id="python")]
if kernels_cy is not None:
    BACKENDS.append(pytest.param(kernels_cy, id="cython"))


@pytest.fixture(params=BACKENDS)
def kernels(request):
    """Run a test against each available kernel backend."""
    return request.param


@pytest.fixture
def both_backends():
    """(python, cython) pair for parity tests; skips if the extension is absent."""
    if kernels_cy is None:
        pytest.skip("compiled extension not available")
    return kernels_py, kernels_cy
