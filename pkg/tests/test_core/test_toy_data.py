import numpy as np
import pytest

from src.core.toy_data import ManifestDataset, ToyTwoGaussians, image_to_vector, make_toy_task, vector_to_image
from src.utils.errors import ParameterError, ValidationError


def test_two_gaussians_statistics():
    task = make_toy_task("two-gaussians")
    batch = task.draw(20_000, np.random.default_rng(3))
    data = np.stack([s.data for s in batch])
    labels = np.array([s.label for s in batch])
    for g, mean in enumerate(task.means):
        rows = data[labels == g]
        assert np.allclose(rows.mean(axis=0), mean, atol=0.03)
        assert np.allclose(rows.var(axis=0), 0.25, rtol=0.05)
    assert task.labels == ["left", "right"]


def test_nearest_mean():
    task = ToyTwoGaussians()
    assert task.nearest_mean(np.array([[-2.0, 5.0], [0.1, 0.0]])).tolist() == [0, 1]


def test_unknown_task():
    with pytest.raises(ParameterError):
        make_toy_task("spirals")


def test_image_vector_conversion():
    image = np.array([[[0, 128, 255]]], dtype=np.uint8)
    vec = image_to_vector(image)
    assert vec[0] == -1.0 and vec[2] == 1.0
    assert np.array_equal(vector_to_image(vec, image.shape), image)
    assert np.array_equal(vector_to_image(np.array([-3.0, 0.0, 9.0]), (1, 1, 3))[0, 0], [0, 128, 255])


def test_manifest_dataset():
    images = [np.full((2, 2, 3), v, dtype=np.uint8) for v in (0, 255, 10)]
    ds = ManifestDataset(images, ["IDHC", "IDHWT", "IDHC"], ["IDHC", "IDHNC", "IDHWT"])
    assert len(ds) == 3 and ds.input_dim == 12 and ds.image_shape == (2, 2, 3)
    assert ds.targets.tolist() == [0, 2, 0]
    batch = ds.draw(5, np.random.default_rng(0))
    assert len(batch) == 5 and all(s.dim == 12 for s in batch)


def test_manifest_dataset_rejects_unknown_label():
    with pytest.raises(ValidationError):
        ManifestDataset([np.zeros((2, 2, 3), dtype=np.uint8)], ["OTHER"], ["IDHC"])


def test_manifest_dataset_rejects_mixed_sizes():
    with pytest.raises(ValidationError):
        ManifestDataset([np.zeros((2, 2, 3), np.uint8), np.zeros((4, 4, 3), np.uint8)], ["a", "a"], ["a"])
