#!/usr/bin/env python3
"""Convert the ElemStatLearn phoneme table to the CSV layout read by fknne.

Input: phoneme.data (comma separated, header
row.names,x.1,...,x.256,g,speaker).
Output, in OUT_DIR:
  logpgram.csv  first row is the frequency grid 1..256, then one curve per row
  labels.csv    one class label per row, 1..5 in the order aa, ao, dcl, iy, sh
"""

import argparse
import csv
import pathlib
import sys

CLASSES = ["aa", "ao", "dcl", "iy", "sh"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("source", type=pathlib.Path, help="phoneme.data")
    ap.add_argument("out_dir", type=pathlib.Path, nargs="?", default=pathlib.Path("data/phoneme"))
    args = ap.parse_args()

    with args.source.open(newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        print(f"{args.source}: no rows", file=sys.stderr)
        return 3
    columns = [f"x.{i}" for i in range(1, 257)]
    missing = [c for c in columns + ["g"] if c not in rows[0]]
    if missing:
        print(f"{args.source}: missing columns {missing[:5]}", file=sys.stderr)
        return 3

    args.out_dir.mkdir(parents=True, exist_ok=True)
    with (args.out_dir / "logpgram.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(range(1, 257))
        for r in rows:
            w.writerow(r[c] for c in columns)
    with (args.out_dir / "labels.csv").open("w") as f:
        for r in rows:
            f.write(f"{CLASSES.index(r['g'].strip()) + 1}\n")

    counts = {c: sum(r["g"].strip() == c for r in rows) for c in CLASSES}
    print(f"wrote {len(rows)} curves to {args.out_dir}: {counts}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
