"""Build the corpus if needed, train the desk configuration and evaluate it.

    python3 scripts/desk_train.py runs/desk [--max-updates 200000] [--seed 1]

Leaves ``model.mlpd``, ``progress.csv`` and ``eval.csv`` under ``<root>/run``.
"""

import argparse
import sys
from pathlib import Path

from mlpdenoise import cli
from mlpdenoise.corpus import build_desk_corpus

CONFIG = """\
corpus_dir = train
test_dir = test
arch = {arch}
noise = awg
sigma = {sigma}
max_updates = {max_updates}
report_every = {report_every}
eval_stride = 3
lr_initial = 0.1
lr_finetune = 0.001
seed = {seed}
wall_clock = false
"""


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("root")
    p.add_argument("--arch", default="(13,2x63)")
    p.add_argument("--sigma", type=float, default=25.0)
    p.add_argument("--max-updates", type=int, default=200_000)
    p.add_argument("--report-every", type=int, default=4000)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args()

    root = Path(args.root)
    if not (root / "train").is_dir():
        build_desk_corpus(root)
    cfg = root / "desk.cfg"
    cfg.write_text(CONFIG.format(**vars(args)), encoding="utf-8")
    out = root / "run"
    code = cli.run(["train", "--config", str(cfg), "--out", str(out)])
    if code:
        sys.exit(code)
    sys.exit(cli.run(["evaluate", "--model", str(out / "model.mlpd"), "--clean", str(root / "test"),
                      "--sigma", str(args.sigma), "--seed", "500", "--out", str(out / "eval.csv")]))


if __name__ == "__main__":
    main()
