import os

import pytest


def pytest_configure(config) -> None:
    config.addinivalue_line('markers', 'slow: full convergence studies against the reference tables')


def pytest_collection_modifyitems(config, items) -> None:
    if os.getenv('FVEGRID_RUN_SLOW', '0') == '1':
        return
    skip = pytest.mark.skip(reason='Set FVEGRID_RUN_SLOW=1 to run the full convergence studies')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)
