"""Shared test fixtures: seeded synthetic masks and a session-scoped tiny corpus."""

import numpy as np
import pytest

from scribbleloop.backbone import TrainConfig
from scribbleloop.corpus import generate_corpus, load_manifest, write_manifest
from scribbleloop.imageops import Component, connected_components
from scribbleloop.pipeline import calibration_from_split, store_calibration, train_rough


def make_blob_mask(seed: int, shape=(96, 96), r0: float = 28.0) -> np.ndarray:
    """Smooth star-shaped blob mask, deterministic per seed.

    The radius is a sinusoid-perturbed constant, so the region is always
    simply connected and free of self-intersections.
    """
    rng = np.random.default_rng(seed)
    amps = rng.uniform(0.0, 0.12, size=4)
    phases = rng.uniform(0.0, 2 * np.pi, size=4)
    cy, cx = shape[0] / 2.0, shape[1] / 2.0
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    theta = np.arctan2(yy - cy, xx - cx)
    radius = r0 * (1.0 + sum(a * np.sin((k + 1) * theta + p) for k, (a, p) in enumerate(zip(amps, phases))))
    return np.hypot(yy - cy, xx - cx) <= radius


def largest_component(mask: np.ndarray) -> Component:
    return connected_components(mask)[0]


def disc_mask(radius: int, shape=(64, 64)) -> np.ndarray:
    cy, cx = shape[0] / 2.0, shape[1] / 2.0
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    return np.hypot(yy - cy, xx - cx) <= radius


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_corpus(root, 10, seed=123, size=512, delta_range=(0.5, 0.9))
    return manifest


@pytest.fixture(scope="session")
def trained_rough(tiny_corpus):
    model, threshold = train_rough(tiny_corpus, TrainConfig(seed=11))
    calib = calibration_from_split(tiny_corpus, model, threshold, n_mc=5, seed=11)
    store_calibration(tiny_corpus, calib)
    write_manifest(tiny_corpus)
    return model, threshold


@pytest.fixture(scope="session")
def calibrated_manifest(tiny_corpus, trained_rough):
    return load_manifest(tiny_corpus.root)
