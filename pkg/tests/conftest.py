"""Shared desk-scale fixtures: a small image corpus and the nets trained on it.

The trained fixtures are session scoped because they dominate the suite's
runtime (a few minutes on one CPU).
"""

import time

import pytest

from mlpdenoise import cli
from mlpdenoise.imageio import load_image_dir
from mlpdenoise.mlp import load, parse_architecture
from mlpdenoise.noise import NoiseSpec
from mlpdenoise.trainer import CHECKPOINT_NAME, LOG_NAME, TrainConfig, initial_net, read_progress, train

DESK_SEED = 1
DESK_CONFIG = """\
# desk run: two hidden layers of 63 units, 13x13 patches in and out
corpus_dir = train
test_dir = test
arch = (13,2x63)
noise = awg
sigma = 25
max_updates = 200000
report_every = 4000
eval_stride = 3
lr_initial = 0.1
lr_finetune = 0.001
seed = {seed}
wall_clock = false
"""

# one hidden layer, overcomplete relative to the 7x7 input
BINARY_ARCH = "(7,255)"
BINARY_UPDATES = 1_000_000


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory):
    pytest.importorskip("skimage")
    from mlpdenoise.corpus import build_desk_corpus
    root = tmp_path_factory.mktemp("desk")
    train_dir, test_dir = build_desk_corpus(root)
    (root / "desk.cfg").write_text(DESK_CONFIG.format(seed=DESK_SEED), encoding="utf-8")
    return {"root": root, "train": train_dir, "test": test_dir, "config": root / "desk.cfg",
            "train_images": [im for _, im in load_image_dir(train_dir)],
            "test_images": [im for _, im in load_image_dir(test_dir)]}


def _cli_train(corpus, name):
    out = corpus["root"] / name
    start = time.process_time()
    code = cli.run(["train", "--config", str(corpus["config"]), "--out", str(out)])
    elapsed = time.process_time() - start
    assert code == 0
    return {"out": out, "seconds": elapsed, "net": load(out / CHECKPOINT_NAME),
            "log": read_progress(out / LOG_NAME), "test_images": corpus["test_images"],
            "train_images": corpus["train_images"]}


@pytest.fixture(scope="session")
def desk_run(desk_corpus):
    """First CLI training run of the desk configuration."""
    return _cli_train(desk_corpus, "run_a")


@pytest.fixture(scope="session")
def desk_run_repeat(desk_corpus, desk_run):
    """Second run with the identical config and seed."""
    return _cli_train(desk_corpus, "run_b")


@pytest.fixture(scope="session")
def binary_net(desk_corpus):
    """A one-hidden-layer net trained long enough for saturated units to appear, and its init."""
    config = TrainConfig(arch=parse_architecture(BINARY_ARCH), noise=NoiseSpec(sigma=25), lr_initial=0.1,
                         lr_finetune=0.1, max_updates=BINARY_UPDATES, report_every=BINARY_UPDATES,
                         seed=DESK_SEED, wall_clock=False)
    result = train(config, images=desk_corpus["train_images"], test_images=[])
    init = initial_net(config)
    return {"net": result.mlp, "init": init, "config": config}


TRAINED_FIXTURES = {"desk_run", "desk_run_repeat", "binary_net"}


def pytest_collection_modifyitems(items):
    for item in items:
        if TRAINED_FIXTURES & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = []
    for name, module in list(sys.modules.items()):
        if name.endswith("test_acceptance"):
            lines = getattr(module, "ACCEPTANCE_RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
