"""Shared pytest wiring.

``--long-mode`` opts in to the full-scale benchmark reproductions,
which need the reference datasets on disk and hours of compute; the
default run covers everything else.
"""

import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--long-mode", action="store_true", default=False,
        help="run the full-scale benchmark reproductions")


@pytest.fixture()
def long_mode(request):
    return request.config.getoption("--long-mode")
