#!/usr/bin/env python3
"""Download the benchmark datasets into a directory the CLI and the
acceptance suite can read.

Tabular sets are written as <name>.csv with a header and the class in a
final column named "label". MNIST is written as the four IDX files under
mnist/. Sources are tried in order; a dataset that cannot be fetched is
reported and skipped.
"""

import argparse
import csv
import glob
import gzip
import os
import shutil
import subprocess
import sys
import tempfile
import urllib.request
import zipfile

OPENML_IDS = {"spambase": 44, "bioresponse": 4134, "mammography": 310}

MNIST_FILES = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
]
MNIST_MIRRORS = [
    "https://ossci-datasets.s3.amazonaws.com/mnist/",
    "https://storage.googleapis.com/cvdf-datasets/mnist/",
]


def fetch(url, timeout=30):
    with urllib.request.urlopen(url, timeout=timeout) as r:
        return r.read()


def write_csv(path, rows, labels):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"f{i}" for i in range(len(rows[0]))] + ["label"])
        for row, y in zip(rows, labels):
            w.writerow(list(row) + [y])


def from_openml(name):
    import numpy as np
    from sklearn.datasets import fetch_openml

    bunch = fetch_openml(data_id=OPENML_IDS[name], as_frame=False, parser="liac-arff")
    x = np.asarray(bunch.data, dtype=float)
    _, y = np.unique(np.asarray(bunch.target), return_inverse=True)
    return x.tolist(), y.tolist()


def spambase_from_keel():
    # The keel-ds wheel on PyPI ships a copy of the UCI table.
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "keel-ds==0.2.5", "-d", tmp],
            check=True,
            stdout=subprocess.DEVNULL,
        )
        wheel = glob.glob(os.path.join(tmp, "keel_ds-*.whl"))[0]
        raw = zipfile.ZipFile(wheel).read("keel_ds/data/balanced/raw/spambase.dat").decode()
    rows, labels = [], []
    for line in raw.splitlines():
        if not line.strip() or line.startswith("@"):
            continue
        cells = [c.strip() for c in line.split(",")]
        rows.append([float(c) for c in cells[:-1]])
        labels.append(int(float(cells[-1])))
    return rows, labels


FALLBACKS = {"spambase": [spambase_from_keel]}


def tabular(name, out):
    target = os.path.join(out, f"{name}.csv")
    if os.path.exists(target):
        print(f"{name}: already present")
        return True
    for source in [lambda: from_openml(name)] + FALLBACKS.get(name, []):
        try:
            rows, labels = source()
        except Exception as e:  # network or format failure: try the next source
            print(f"{name}: source failed ({type(e).__name__}: {e})")
            continue
        write_csv(target, rows, labels)
        print(f"{name}: {len(rows)} rows -> {target}")
        return True
    print(f"{name}: unavailable")
    return False


def mnist(out):
    target = os.path.join(out, "mnist")
    os.makedirs(target, exist_ok=True)
    for fname in MNIST_FILES:
        path = os.path.join(target, fname)
        if os.path.exists(path):
            continue
        for mirror in MNIST_MIRRORS:
            try:
                data = gzip.decompress(fetch(mirror + fname + ".gz"))
            except Exception as e:
                print(f"mnist: {mirror} failed ({type(e).__name__})")
                continue
            with open(path, "wb") as f:
                f.write(data)
            break
        else:
            print("mnist: unavailable")
            shutil.rmtree(target, ignore_errors=True)
            return False
    print(f"mnist: -> {target}")
    return True


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="data")
    ap.add_argument("datasets", nargs="*", default=list(OPENML_IDS) + ["mnist"])
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    ok = True
    for name in args.datasets:
        ok &= mnist(args.out) if name == "mnist" else tabular(name, args.out)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
