"""Write the desk-scale corpus (PGM crops of the scikit-image sample photos).

    python3 scripts/make_corpus.py runs/desk
"""

import argparse

from mlpdenoise.corpus import build_desk_corpus


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("root")
    p.add_argument("--n-train", type=int, default=24)
    p.add_argument("--n-test", type=int, default=10)
    p.add_argument("--seed", type=int, default=7)
    args = p.parse_args()
    train_dir, test_dir = build_desk_corpus(args.root, n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    print(f"train: {train_dir}\ntest:  {test_dir}")


if __name__ == "__main__":
    main()
