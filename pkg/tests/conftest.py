"""Shared fixtures: record builders, bin-table loaders, scripted backends."""

import csv
import math
from pathlib import Path

import pytest

from confcal.client import MockBackend, ModelClient
from confcal.metrics import EvalRecord

DATA_DIR = Path(__file__).parent / "data"


def make_record(i, correct, confidence, task_id="task", method="self_eval", flags=()):
    return EvalRecord(
        id=f"ex{i:05d}",
        task_id=task_id,
        prediction="p",
        gold="g",
        correct=correct,
        confidence=confidence,
        method=method,
        flags=frozenset(flags),
    )


def load_bin_csv(name):
    rows = []
    with open(DATA_DIR / name, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                (int(row["count"]), float(row["mean_accuracy"]), float(row["mean_confidence"]))
            )
    return rows


def yes_no_entry(p_yes, p_no):
    """Mock script entry answering the self-eval prompt with one token."""
    dist = {}
    if p_yes > 0:
        dist["Yes"] = math.log(p_yes)
    if p_no > 0:
        dist["No"] = math.log(p_no)
    if not dist:
        dist = {"Maybe": math.log(0.9)}
    top = max(dist, key=dist.get)
    return {"tokens": [top], "distributions": [dist]}


def answer_entry(text):
    """Mock script entry for a free-form generation pass."""
    return {"tokens": [text], "distributions": [{text: -0.01}]}


@pytest.fixture
def scripted_client():
    """Factory: ModelClient over an in-order MockBackend script."""

    def _factory(entries, **kwargs):
        return ModelClient(MockBackend(entries), **kwargs)

    return _factory
