import numpy as np
import pytest

from stclr.config import RunConfig
from stclr.video import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def micro_root(tmp_path_factory):
    """Small rendered dataset shared by read-only tests: 2 classes, 8 clips."""
    root = tmp_path_factory.mktemp("micro_data")
    spec = SyntheticSpec(classes=2, subjects=4, videos_per_subject_per_class=1,
                         frames=10, height=32, width=32, seed=11)
    generate_synthetic(spec, root)
    return root


@pytest.fixture(scope="session")
def micro_index(micro_root):
    from stclr.video import LabelTaxonomy, load_dataset

    return load_dataset(micro_root, LabelTaxonomy.of_size(2))


def micro_config(out_dir, **overrides):
    base = {
        "seed": 3,
        "preset": "tiny",
        "out_dir": str(out_dir),
        "folds": 2,
        "data": {"synthetic": {"classes": 2, "subjects": 4,
                                "videos_per_subject_per_class": 1,
                                "frames": 10, "height": 32, "width": 32}},
        "pretrain": {"epochs": 2, "batch_size": 4},
        "finetune": {"linear_epochs": 1, "full_epochs": 1, "batch_size": 4},
    }
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key].update(value)
        else:
            base[key] = value
    return RunConfig.from_dict(base)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
