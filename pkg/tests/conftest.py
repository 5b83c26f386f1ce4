"""Shared fixtures: rendered corpora and small trained models.

Session scope keeps the expensive pieces (digit rendering, training) to a
single build per test run.
"""

import numpy as np
import pytest

from pcgraph import data as dataio
from pcgraph import engine, topology


@pytest.fixture(scope="session")
def corpus():
    imgs, labs = dataio.render_digits(1500, seed=7)
    return dataio.ImageDataset(imgs.reshape(-1, 784) / 255.0, labs, source="synthetic")


@pytest.fixture(scope="session")
def corpus_test():
    imgs, labs = dataio.render_digits(500, seed=8)
    return dataio.ImageDataset(imgs.reshape(-1, 784) / 255.0, labs, source="synthetic")


@pytest.fixture(scope="session")
def tiny_corpus():
    # 8x8 digits keep graph sizes small enough for fast end-to-end tests
    imgs, labs = dataio.render_digits(400, seed=11, rows=8, cols=8)
    return dataio.ImageDataset(imgs.reshape(-1, 64) / 255.0, labs,
                               rows=8, cols=8, source="synthetic")


@pytest.fixture(scope="session")
def idx_dir(tmp_path_factory):
    """On-disk IDX train/test pair small enough for CLI round trips."""
    root = tmp_path_factory.mktemp("idxdata")
    tr_img, tr_lab = dataio.render_digits(120, seed=3)
    te_img, te_lab = dataio.render_digits(48, seed=4)
    dataio.write_idx(tr_img, tr_lab, root / dataio.TRAIN_IMAGES,
                     root / dataio.TRAIN_LABELS)
    dataio.write_idx(te_img, te_lab, root / dataio.TEST_IMAGES,
                     root / dataio.TEST_LABELS)
    return root


@pytest.fixture(scope="session")
def tiny_model(tiny_corpus):
    # fully connected graph on 64 pixels + 10 labels, good enough to move
    # label vertices in the right direction for API-level task tests
    hot = np.zeros((len(tiny_corpus), 10))
    hot[np.arange(len(tiny_corpus)), tiny_corpus.labels] = 1.0
    rows = np.hstack([tiny_corpus.images, hot])
    g = topology.fully_connected(120, 74, seed=0)
    sched = engine.TrainSchedule(T=12, gamma=0.5, alpha=1e-3, epochs=6,
                                 batch_size=32, optimizer="adam", seed=0)
    trained, trace = engine.train(g, rows, sched)
    return trained
