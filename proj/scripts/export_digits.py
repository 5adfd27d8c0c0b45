"""Writes the scikit-learn 8x8 digits set as CSV: 64 integer pixel values (0-16) then the label."""
import argparse
import csv

from sklearn.datasets import load_digits


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out", nargs="?", default="data/digits.csv")
    args = ap.parse_args()
    d = load_digits()
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        for x, y in zip(d.data.astype(int), d.target):
            w.writerow([*x.tolist(), int(y)])


if __name__ == "__main__":
    main()
