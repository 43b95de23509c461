import pytest

from countlab.dyck import GenSpec, SplitName, generate_split


@pytest.fixture(scope="session")
def nano_splits():
    """Small disjoint train/val pair reused by training and evaluation tests."""
    train = generate_split(SplitName.TRAIN, GenSpec(120, 2, 30, seed=900))
    val = generate_split(
        SplitName.VALIDATION, GenSpec(60, 2, 30, seed=901), exclude=frozenset(train.texts())
    )
    return train, val
