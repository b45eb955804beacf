import pathlib

import pytest

import xrv

GOLDEN_DIR = pathlib.Path(__file__).parent / "golden"

# Fixed-seed corpus used by the acceptance suite and the CLI end-to-end
# golden run; changing these invalidates the frozen goldens.
SUITE_DIMS = (64, 64, 64)
SUITE_ELLIPSOIDS = 6
TRAIN_SEEDS = tuple(range(101, 109))
TEST_SEEDS = (201, 202, 203)
SUITE_HEIGHTS = (2, 4, 8)


def strip_runtime(csv_text):
    """Drop the wall-clock column (the only nondeterministic one)."""
    lines = csv_text.strip().split("\n")
    return "\n".join(",".join(line.split(",")[:-1]) for line in lines) + "\n"


def random_volume(rng, nx, ny, nz, lo=0.0, hi=1000.0, spacing=(1.0, 1.0, 1.0)):
    data = rng.uniform(lo, hi, size=(nz, ny, nx))
    return xrv.Volume(data=data, spacing=spacing)


def random_image(rng, nx, nz, lo=0.0, hi=1000.0, spacing=(1.0, 1.0)):
    data = rng.uniform(lo, hi, size=(nz, nx))
    return xrv.ProjectionImage(data=data, spacing=spacing)


@pytest.fixture(scope="session")
def suite_train():
    return [xrv.gen_phantom(s, SUITE_DIMS, SUITE_ELLIPSOIDS) for s in TRAIN_SEEDS]


@pytest.fixture(scope="session")
def suite_test():
    return [xrv.gen_phantom(s, SUITE_DIMS, SUITE_ELLIPSOIDS) for s in TEST_SEEDS]


@pytest.fixture(scope="session")
def suite_index(suite_train):
    spec = xrv.PatchSpec(p=5, h=4, stride=4, k=8)
    pairs = []
    for vol_id, tv in enumerate(suite_train):
        pairs.extend(xrv.extract_pairs(tv, spec, volume_id=vol_id))
    return xrv.build_index(pairs, spec)
