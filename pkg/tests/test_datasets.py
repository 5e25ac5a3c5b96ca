import numpy as np
import pytest

from kdbalance.datasets import DatasetSpec, generate, to_csv
from kdbalance.distill import TrainConfig, train_teacher
from kdbalance.nn import accuracy, backward, forward, init_network, loss_cls, sgd_step


def test_noise_free_blobs_sit_on_centres():
    train, test = generate(DatasetSpec(noise=0.0, n_classes=4))
    for batch in (train, test):
        theta = 2 * np.pi * batch.labels / 4
        centres = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        assert np.array_equal(batch.inputs, centres)


def test_deterministic():
    spec = DatasetSpec(kind="concentric_rings", seed=9)
    (a, b), (c, d) = generate(spec), generate(spec)
    assert np.array_equal(a.inputs, c.inputs) and np.array_equal(b.labels, d.labels)


def test_train_and_test_are_different_draws():
    train, test = generate(DatasetSpec(n_train=300, n_test=300))
    assert not np.array_equal(train.inputs, test.inputs)


@pytest.mark.parametrize("kind", ["gaussian_blobs", "concentric_rings"])
def test_labels_balanced_and_in_range(kind):
    train, test = generate(DatasetSpec(kind=kind, n_classes=3, n_train=100, n_test=31))
    for batch in (train, test):
        counts = np.bincount(batch.labels, minlength=3)
        assert counts.max() - counts.min() <= 1
        assert batch.labels.min() >= 0 and batch.labels.max() < 3


def test_rings_radii():
    train, _ = generate(DatasetSpec(kind="concentric_rings", noise=0.0))
    r = np.linalg.norm(train.inputs, axis=1)
    assert np.allclose(r, 1 + train.labels, rtol=1e-14)


def test_invalid_specs():
    for kw in ({"n_classes": 1}, {"noise": -1.0}, {"kind": "moons"}, {"n_train": 2}):
        with pytest.raises(ValueError):
            DatasetSpec(**kw)


def test_separable_data_learned_quickly():
    train, _ = generate(DatasetSpec(noise=0.0))
    net = init_network([2, 3], "tanh", seed=0)
    for _ in range(200):
        z, cache = forward(net, train)
        net = sgd_step(net, backward(net, cache, loss_cls(z, train.labels)[1]), 0.5)
    assert accuracy(net, train) == 1.0


def test_teacher_separable_blobs():
    train, _ = generate(DatasetSpec(noise=0.0))
    assert accuracy(train_teacher(TrainConfig(), train), train) == 1.0


def test_csv_export():
    train, _ = generate(DatasetSpec(n_train=6, n_test=3))
    lines = to_csv(train).splitlines()
    assert lines[0] == "x0,x1,label"
    assert len(lines) == 7
    x0, x1, label = lines[1].split(",")
    assert float(x0) == train.inputs[0, 0] and int(label) == train.labels[0]
