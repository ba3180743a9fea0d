"""Fetch the MovieLens 100k ratings and write them as ``user::item::rating::timestamp``.

The ratings are taken from the copy bundled in the ``recbole`` wheel, which is
reachable through a plain package index when grouplens.org is not.

    python scripts/fetch_movielens.py [--out data/ml-100k/ratings.dat]
"""

from __future__ import annotations

import argparse
import glob
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

WHEEL = "recbole==1.2.1"
MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def convert(lines, out: Path) -> int:
    out.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(out, "w") as fh:
        for i, line in enumerate(lines):
            if i == 0 or not line.strip():
                continue  # header row
            user, item, rating, ts = line.rstrip("\n").split("\t")
            fh.write(f"{user}::{item}::{int(float(rating))}::{int(float(ts))}\n")
            n += 1
    return n


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data/ml-100k/ratings.dat")
    ap.add_argument("--wheel", help="use an already downloaded recbole wheel")
    args = ap.parse_args(argv)
    out = Path(args.out)
    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel
        if wheel is None:
            subprocess.run(
                [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, WHEEL],
                check=True,
            )
            wheel = glob.glob(f"{tmp}/recbole-*.whl")[0]
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read(MEMBER).decode("utf-8")
    n = convert(text.splitlines(), out)
    print(f"wrote {n} ratings to {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
