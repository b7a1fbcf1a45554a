"""Write the deterministic mini corpus (20 captures, 5 labels) as pcaps plus manifest.csv."""

import argparse

from synthpriv.capture_io import save_corpus
from synthpriv.minicorpus import build_mini_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="data/mini")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    corpus = build_mini_corpus(seed=args.seed)
    manifest = save_corpus(corpus, args.out)
    n = sum(len(c.packets) for c in corpus)
    print(f"wrote {len(corpus)} captures / {n} packets -> {manifest}")


if __name__ == "__main__":
    main()
