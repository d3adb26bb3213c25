"""End-to-end CLI pipeline used by the CLI tests and the acceptance suite."""
import json
import os
from contextlib import contextmanager
from pathlib import Path

from dpnn.cli import main

HYPER = {"epochs": 5, "learning_rate": 0.01}


@contextmanager
def chdir(path):
    old = os.getcwd()
    os.chdir(path)
    try:
        yield
    finally:
        os.chdir(old)


def run_pipeline(workdir, n=2000, seed=7):
    """synth, train, cv, clusters, tree, stats and pca with relative paths.

    Returns the exit code of each step, in order.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    (workdir / "h.json").write_text(json.dumps(HYPER))
    steps = [
        ["synth", "--n", str(n), "--out", "d.csv", "--labels-out", "planted.csv"],
        ["train", "--data", "d.csv", "--hyper", "h.json", "--out", "m.json", "--trace-out", "trace.json"],
        ["cv", "--data", "d.csv", "--hyper", "h.json", "--k", "3", "--repeats", "1", "--out", "cv.json"],
        ["clusters", "--data", "d.csv", "--model", "m.json", "--out", "clusters.json", "--assignments-out", "a.csv"],
        ["tree", "--data", "d.csv", "--clusters", "a.csv", "--out", "tree.json"],
        ["stats", "--data", "d.csv", "--clusters", "a.csv", "--out", "stats.json"],
        ["pca", "--data", "d.csv", "--include-race", "--out", "pca.json"],
    ]
    codes = []
    with chdir(workdir):
        for step in steps:
            codes.append(main(step + ["--seed", str(seed)]))
    return codes


def output_bytes(workdir):
    """Every file the pipeline wrote, keyed by name."""
    return {p.name: p.read_bytes() for p in sorted(Path(workdir).iterdir()) if p.is_file()}
