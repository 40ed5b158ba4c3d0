import numpy as np
import pytest

from solokit import _backend
from solokit.masks import BinaryMask, Instance, InstanceSet


@pytest.fixture(params=_backend.available())
def backend(request):
    """Run the test once per kernel backend."""
    previous = _backend.name()
    _backend.use(request.param)
    yield request.param
    _backend.use(previous)


def random_mask(rng, h, w, density=None):
    if density is None:
        # blobby rectangles overlap more realistically than salt-and-pepper
        m = np.zeros((h, w), dtype=bool)
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = rng.integers(y0 + 1, h + 1), rng.integers(x0 + 1, w + 1)
        m[y0:y1, x0:x1] = True
        return BinaryMask(m)
    return BinaryMask(rng.random((h, w)) < density)


def random_set(rng, n, h=32, w=32, n_classes=1, tie_scores=False):
    insts = []
    for _ in range(n):
        score = round(rng.random(), 1) if tie_scores else rng.random()
        insts.append(Instance(score, int(rng.integers(n_classes)), random_mask(rng, h, w)))
    return InstanceSet(h, w, tuple(insts))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
