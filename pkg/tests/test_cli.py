import csv
import json

import numpy as np
import pytest

from compactpoisson import exterior as ex
from compactpoisson.cli import main
from compactpoisson.gallery import non_poisson_fixture, zero_bivector

# frozen from tests/oracles/derive_values.py: rank histogram of the two-triangle
# square on a 200 x 200 lattice of [0, 1]^2
SQUARE_200_RANKS = {0: 20497, 2: 19503}


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def write_field(path, fld):
    path.write_text(json.dumps(ex.field_to_json(fld)))
    return str(path)


@pytest.fixture(scope="module")
def so3_artifact(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "so3.json"
    assert main(["construct", "lie-algebra", "--example", "so3", "--out", str(out)]) == 0
    return out


def test_construct_writes_provenance(so3_artifact):
    art = json.loads(so3_artifact.read_text())
    assert art["format"] == "compactpoisson.bivector"
    prov = art["provenance"]
    assert prov["taper"] == {"regime": "single", "delta": 0.1}
    assert prov["bump"] == [1.0, 2.0]
    assert art["field"]["degree"] == 2


def test_verify_all_passes(so3_artifact, tmp_path):
    rep = tmp_path / "rep.json"
    assert main(["verify", str(so3_artifact), "--all", "--grid", "2000", "--out", str(rep)]) == 0
    checks = {r["check"]: r["pass"] for r in json.loads(rep.read_text())}
    assert checks == {"jacobi": True, "support": True, "germ": True, "rank": True}


def test_construct_constant_rank(tmp_path):
    out = tmp_path / "cr.json"
    assert main(["construct", "constant-rank", "--n", "2", "--r", "1", "--out", str(out)]) == 0
    seed = json.loads(out.read_text())["meta"]["seed_field"]
    assert seed["dim"] == 2
    assert main(["verify", str(out), "--rank", "--grid", "500", "--out", str(tmp_path / "r.json")]) == 0


def test_verify_non_poisson_fails_with_witness(tmp_path):
    path = write_field(tmp_path / "bad.json", non_poisson_fixture())
    rep = tmp_path / "rep.json"
    assert main(["verify", path, "--jacobi", "--grid", "500", "--out", str(rep)]) == 1
    (r,) = json.loads(rep.read_text())
    assert r["pass"] is False and len(r["witness"]) == 3


def test_verify_zero_bivector_passes(tmp_path):
    path = write_field(tmp_path / "zero.json", zero_bivector(3))
    assert main(["verify", path, "--out", str(tmp_path / "rep.json")]) == 0


def test_bad_json_is_input_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"dim": 3,\n "c": [1, 2,]}')
    assert main(["construct", "lie-algebra", "--input", str(bad), "--out", str(tmp_path / "o.json")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_schema_violation_is_input_error(tmp_path):
    bad = tmp_path / "la.json"
    bad.write_text(json.dumps({"dim": 3, "c": [[1, 2, 9, 1]]}))
    assert main(["construct", "lie-algebra", "--input", str(bad), "--out", str(tmp_path / "o.json")]) == 2
    assert main(["verify", str(tmp_path / "missing.json")]) == 2
    assert main(["construct", "constant-rank", "--n", "3"]) == 2
    assert main(["construct", "patchwork", "--example", "hexagon"]) == 2


def test_export_patchwork_ranks(tmp_path):
    art = tmp_path / "sq.json"
    assert main(["construct", "patchwork", "--example", "square", "--out", str(art)]) == 0
    out = tmp_path / "sq.csv"
    assert main(["export", str(art), "--fields", "rank", "--grid", "200", "--out", str(out)]) == 0
    cols, data = read_csv(out)
    assert cols == ["x", "y", "rank"]
    ranks, counts = np.unique(data[:, 2], return_counts=True)
    assert dict(zip(ranks.astype(int).tolist(), counts.tolist())) == SQUARE_200_RANKS


def test_export_zero_bivector(tmp_path):
    path = write_field(tmp_path / "zero.json", zero_bivector(3))
    out = tmp_path / "z.csv"
    assert main(["export", path, "--fields", "components", "--grid", "6", "--out", str(out)]) == 0
    cols, data = read_csv(out)
    assert cols == ["x", "y", "z", "pi_1_2", "pi_1_3", "pi_2_3"]
    assert data.shape == (216, 6)
    assert np.all(data[:, 3:] == 0)


def test_export_jacobi_peaks_at_corner(tmp_path):
    path = write_field(tmp_path / "bad.json", non_poisson_fixture())
    out = tmp_path / "j.json"
    assert main(["export", path, "--fields", "jacobi", "--grid", "9", "--format", "json", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    rows = np.array(d["rows"])
    coords = rows[:, :3]
    nearest = np.argmin(np.linalg.norm(coords - 1.0, axis=1))
    assert rows[nearest, -1] == rows[:, -1].max()


def test_export_rejects_unknown_field(so3_artifact):
    assert main(["export", str(so3_artifact), "--fields", "curvature"]) == 2


def test_verify_is_deterministic(so3_artifact, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        main(["verify", str(so3_artifact), "--jacobi", "--grid", "300", "--seed", "7", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_construct_is_deterministic(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        main(["construct", "ball", "--example", "affine", "--seed", "3", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_gallery_list(capsys):
    assert main(["gallery", "--list"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert len(names) == 13 and "patchwork-square" in names


def test_gallery_only(tmp_path):
    out = tmp_path / "g.json"
    name = "ball-so3"
    assert main(["gallery", "--only", name, "--out", str(out)]) == 0
    text = out.read_text()
    assert "NaN" not in text and "Infinity" not in text
    rep = json.loads(text)
    assert [e["name"] for e in rep["entries"]] == [name]
