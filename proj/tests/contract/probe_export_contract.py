"""Reads a probe export with the Python standard library only.

Usage: probe_export_contract.py <isflab binary> <scratch dir>
"""

import array
import csv
import json
import math
import pathlib
import shutil
import subprocess
import sys


def run(cli, *args):
    subprocess.run([cli, *args], check=True, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
                   env={"SOURCE_DATE_EPOCH": "0"})


def read_matrix(base):
    shape = json.loads(pathlib.Path(str(base) + ".shape").read_text())
    assert shape["dtype"] == "float32" and shape["order"] == "row-major" and shape["endian"] == "little", shape
    values = array.array("f")
    values.frombytes(pathlib.Path(str(base) + ".f32bin").read_bytes())
    if sys.byteorder != "little":
        values.byteswap()
    assert len(values) == shape["rows"] * shape["cols"], base
    return shape["rows"], shape["cols"], values


def main():
    cli, scratch = sys.argv[1], pathlib.Path(sys.argv[2])
    shutil.rmtree(scratch, ignore_errors=True)
    task = ["--set", "task.kind=single", "--set", 'task.patterns=["triangle"]', "--set", "task.train=120", "--set", "task.test=30",
            "--set", "task.n=[4,5]", "--set", "task.edges=[3,8]"]
    model = ["--set", "model.layers=2", "--set", "model.heads=2", "--set", "model.width=16", "--set", "model.dropout=0",
             "--set", "train.micro_batch=8", "--set", "train.max_steps=10", "--set", "train.eval_every=5", "--set", "train.eval_samples=8"]
    run(cli, "gen", *task, "--out", str(scratch / "gen"))
    data = str(scratch / "gen" / "data")
    run(cli, "train", "--data", data, *model, "--out", str(scratch / "train"))
    run(cli, "probe", "--checkpoint", str(scratch / "train" / "checkpoint"), "--data", data, "--layers", "all",
        "--out", str(scratch / "probe"))

    root = scratch / "probe" / "probe"
    meta = json.loads((root / "meta.json").read_text())
    assert meta["format"] == "isflab-probe" and meta["version"] == 1, meta
    assert meta["layers"] == [1, 2], meta["layers"]

    with open(root / "labels.csv", newline="") as f:
        labels = list(csv.DictReader(f))
    assert len(labels) == meta["samples"] == 30, len(labels)
    assert all(row["label"] for row in labels)

    with open(root / "metrics.csv", newline="") as f:
        metrics = list(csv.DictReader(f))
    assert [int(m["layer"]) for m in metrics] == meta["layers"]
    for m in metrics:
        for key in ("ari", "nmi"):
            v = float(m[key])
            assert math.isfinite(v) and -1.0 <= v <= 1.0, m

    for layer in meta["layers"]:
        rows, cols, values = read_matrix(root / f"layer_{layer}")
        assert (rows, cols) == (meta["samples"], meta["width"]), (rows, cols)
        assert all(math.isfinite(v) for v in values)
        prows, pcols, _ = read_matrix(root / f"layer_{layer}.pca")
        assert (prows, pcols) == (rows, 2), (prows, pcols)
    print("probe export readable:", len(meta["layers"]), "layers,", meta["samples"], "samples")


if __name__ == "__main__":
    main()
