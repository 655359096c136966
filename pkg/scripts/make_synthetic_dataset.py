#!/usr/bin/env python3
"""Generate a synthetic corpus for exercising the pipeline.

Two flavors: the four-class fusion corpus (tags separate one category pair,
image content the other) and the tag-only eight-category codebook corpus.
"""

import argparse
from pathlib import Path

from ccfeat.synthdata import build_codebook_corpus, build_four_class_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", help="output directory")
    parser.add_argument("--kind", choices=("four-class", "codebook"), default="four-class")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--train-per-class", type=int, default=10)
    parser.add_argument("--test-per-class", type=int, default=5)
    args = parser.parse_args()

    out = Path(args.out)
    if args.kind == "four-class":
        info = build_four_class_corpus(out, seed=args.seed,
                                       train_per_class=args.train_per_class,
                                       test_per_class=args.test_per_class)
        print(f"four-class corpus in {out}")
        print(f"  categories: {', '.join(info['categories'])}")
    else:
        info = build_codebook_corpus(out, seed=args.seed)
        print(f"codebook corpus in {out}")
        print(f"  categories: {', '.join(info['labels'])}")
    print(f"  manifest: {info['manifest']}")
    print(f"  config:   {info['config']}")


if __name__ == "__main__":
    main()
