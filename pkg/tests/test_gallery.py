import json

import numpy as np
import pytest

from compactpoisson import gallery
from compactpoisson.cli import main

SMALL = gallery.GalleryConfig(jacobi_points=500, collar_points=500, support_points=200, rays=4)


@pytest.fixture(scope="module")
def full_report():
    return gallery.run_gallery(gallery.GalleryConfig())


def test_every_entry_meets_expectation(full_report):
    failed = [e["name"] for e in full_report["entries"] if not e["pass"]]
    assert not failed
    assert full_report["pass"]
    assert len(full_report["entries"]) == len(gallery.entries())


def test_names_are_unique():
    names = [e.name for e in gallery.entries()]
    assert len(names) == len(set(names))


def test_serialisation_drops_runtime(full_report):
    text = gallery.gallery_json(full_report)
    assert "runtime" not in text
    assert "NaN" not in text and "Infinity" not in text


def test_same_seed_same_bytes():
    names = ["ball-so3", "patchwork-square", "extension-cosymplectic"]
    a = gallery.gallery_json(gallery.run_gallery(SMALL, names))
    b = gallery.gallery_json(gallery.run_gallery(SMALL, names))
    assert a == b


def test_seed_changes_samples():
    names = ["ball-so3"]
    a = json.loads(gallery.gallery_json(gallery.run_gallery(SMALL, names)))
    other = gallery.GalleryConfig(seed=SMALL.seed + 1, jacobi_points=500, collar_points=500,
                                  support_points=200, rays=4)
    b = json.loads(gallery.gallery_json(gallery.run_gallery(other, names)))
    assert a["entries"][0]["pass"] and b["entries"][0]["pass"]
    assert a["entries"][0]["reports"] != b["entries"][0]["reports"]


def test_unknown_entry():
    with pytest.raises(KeyError):
        gallery.run_gallery(SMALL, ["ball-dodecahedron"])


def test_mismatch_is_reported():
    entry = gallery.entries()[0]
    entry.expected = dict(entry.expected, t_end=5)
    assert not gallery.run_entry(entry, SMALL)["pass"]


CONSTRUCTS = [
    ["ball", "--example", "quadratic"],
    ["lie-algebra", "--example", "heisenberg"],
    ["constant-rank", "--n", "4", "--r", "1"],
    ["collar", "--example", "exp-decay"],
    ["patchwork", "--example", "square"],
    ["extension", "--example", "cosymplectic", "--samples", "500"],
    ["first-jet", "--example", "exp"],
]


@pytest.mark.parametrize("argv", CONSTRUCTS, ids=lambda a: a[0])
def test_construct_export_has_no_nan(argv, tmp_path):
    art = tmp_path / "a.json"
    assert main(["construct", *argv, "--out", str(art)]) == 0
    out = tmp_path / "e.json"
    assert main(["export", str(art), "--fields", "components,rank,jacobi", "--grid", "7",
                 "--format", "json", "--out", str(out)]) == 0
    rows = np.array(json.loads(out.read_text())["rows"], dtype=float)
    assert rows.size and np.all(np.isfinite(rows))
