import numpy as np
import pytest

from swirpad import synthgen
from swirpad.dataset import BandImage, SpectralStack


def make_stack(arrays: dict[int, np.ndarray], frame_index: int = 0) -> SpectralStack:
    bands = {wl: BandImage(wavelength=wl, values=np.asarray(v, dtype=np.float32))
             for wl, v in arrays.items()}
    return SpectralStack(bands, frame_index=frame_index)


TINY_COUNTS = {
    "train": {"bonafide": 4, "print": 2, "replay": 1, "tattoo": 1, "glasses": 1},
    "dev": {"bonafide": 3, "print": 1, "replay": 1, "tattoo": 1},
    "test": {"bonafide": 3, "print": 1, "rigid_mask": 1, "glasses": 1, "tattoo": 1},
}


@pytest.fixture(scope="session")
def tiny_config():
    return synthgen.GeneratorConfig(counts={s: dict(d) for s, d in TINY_COUNTS.items()},
                                    frames_per_presentation=4, image_size=32,
                                    noise_sigma=0.01, seed=123)


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory, tiny_config):
    root = tmp_path_factory.mktemp("tinydata")
    synthgen.generate_dataset(tiny_config, root)
    return root
