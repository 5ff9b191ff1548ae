import numpy as np
import pytest

from planetseg import (
    SegNeXtConfig,
    build_segnext_s,
    build_unet,
    generate_synthetic,
    load_dataset,
    prepare_samples,
)

TINY_SEGNEXT = SegNeXtConfig(depths=(1, 1, 1, 1), widths=(8, 16, 32, 64), decoder_width=16)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic(6, seed=11, out_root=root)
    return root


@pytest.fixture(scope="session")
def samples(synth_root):
    return load_dataset(synth_root)


@pytest.fixture(scope="session")
def prepared(samples):
    return prepare_samples(samples)


@pytest.fixture(scope="session")
def tiny_unet():
    return build_unet(seed=3, base_width=8)


@pytest.fixture(scope="session")
def tiny_segnext():
    return build_segnext_s(TINY_SEGNEXT, seed=4)


@pytest.fixture
def disk_mask():
    yy, xx = np.mgrid[0:256, 0:256]
    return (((yy - 128) ** 2 + (xx - 128) ** 2) <= 60**2).astype(np.uint8)
