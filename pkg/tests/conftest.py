import pytest

from ncplace import kernels


@pytest.fixture(params=["python", "cython"] if kernels.BACKEND == "cython" else ["python"])
def backend(request):
    """Every available kernel backend."""
    return request.param
