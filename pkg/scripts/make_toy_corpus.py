"""Regenerate the bundled toy corpus and its template table.

    python3 scripts/make_toy_corpus.py [--seed 7] [--out data]
"""

import argparse
from pathlib import Path

from retrologic.cli import extract_all
from retrologic.data import load_reactions
from retrologic.templates import write_templates
from retrologic.toy import make_splits, write_split


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="data")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train, val, test = make_splits(args.seed)
    for name, rows, prefix in (("train", train, "tr"), ("val", val, "va"), ("test", test, "te")):
        write_split(out / f"toy_{name}.tsv", rows, prefix)
        print(f"{name}\t{len(rows)}")
    templates = extract_all(load_reactions(out / "toy_train.tsv").records)
    write_templates(out / "toy.templates", templates)
    print(f"templates\t{len(templates)}")


if __name__ == "__main__":
    main()
