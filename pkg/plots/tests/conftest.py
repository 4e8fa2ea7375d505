import importlib.util
import sys
from pathlib import Path

import pytest

_PKG_DIR = Path(__file__).resolve().parents[1]
TESTDATA = _PKG_DIR / "testdata"

# load the renderer by file path; putting the package directory on
# sys.path would shadow the main test package when both suites run in
# one session
if "render" not in sys.modules:
    _spec = importlib.util.spec_from_file_location("render", _PKG_DIR / "render.py")
    _mod = importlib.util.module_from_spec(_spec)
    sys.modules["render"] = _mod
    _spec.loader.exec_module(_mod)


@pytest.fixture(scope="session")
def testdata() -> Path:
    return TESTDATA
