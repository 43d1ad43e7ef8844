import pytest

from elastisr import DomainSpec, MaterialParams, generate_dataset, save_dataset


@pytest.fixture(scope="session")
def domain():
    return DomainSpec()


@pytest.fixture(scope="session")
def mat():
    return MaterialParams()


@pytest.fixture(scope="session")
def tiny_dataset():
    """Five load cases at LR 16 / HR 64 with a small fine mesh; fast to build."""
    return generate_dataset(
        q_start=0.0,
        q_end=4.0,
        dq=1.0,
        lr_resolution=16,
        hr_resolution=64,
        coarse_nodes=41,
        fine_nodes=2113,
        split_ratio=0.8,
        split_seed=0,
    )


@pytest.fixture(scope="session")
def tiny_dataset_dir(tiny_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_ds")
    save_dataset(tiny_dataset, root)
    return root
