import csv

import numpy as np
import pytest
from PIL import Image

from skintone_debias.color import FITZPATRICK_THRESHOLDS, fitzpatrick_from_ita
from skintone_debias.synthimg import make_hair_fixture


def _clear_of_thresholds(ita, margin=1.5):
    return all(abs(ita - t) > margin for t in FITZPATRICK_THRESHOLDS)


@pytest.fixture
def fixture_corpus(tmp_path):
    """Eight lesion images on disk with recorded ground-truth Fitzpatrick types.

    Colours are redrawn until their ITA is at least 1.5 degrees from any
    threshold, so the expected label is unambiguous.
    """
    rng = np.random.default_rng(2024)
    truth = {}
    rows = []
    formats = ["png", "bmp"]
    while len(truth) < 8:
        fx = make_hair_fixture(rng)
        if not _clear_of_thresholds(fx.true_ita):
            continue
        image_id = f"img{len(truth):02d}"
        path = tmp_path / f"{image_id}.{formats[len(truth) % 2]}"
        Image.fromarray(fx.image).save(path)
        truth[image_id] = fitzpatrick_from_ita(fx.true_ita)
        rows.append({"image_id": image_id, "path": path.name,
                     "human_fitzpatrick": truth[image_id], "diagnosis": "nevus"})
    manifest = tmp_path / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["image_id", "path", "human_fitzpatrick", "diagnosis"])
        w.writeheader()
        w.writerows(rows)
    return manifest, truth


_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the verdict of one acceptance criterion and assert it."""
    def check(label: str, ok: bool, detail: str) -> None:
        _CRITERIA[label] = (bool(ok), detail)
        print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
        assert ok, f"{label}: {detail}"
    return check


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, (ok, detail) in sorted(_CRITERIA.items(), key=lambda kv: (int(kv[0].split()[0].rstrip("ab")), kv[0])):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
