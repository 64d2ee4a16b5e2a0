import csv

import numpy as np
import pytest

from pocketforge.cloud import PointCloud, SplitPlane
from pocketforge.utils import (
    read_cloud,
    read_json,
    substream,
    write_cloud,
    write_csv,
    write_json,
    write_plane,
    write_ply,
)


class TestSubstream:
    def test_same_names_same_stream(self):
        a = substream(7, "train", "epoch", 3).standard_normal(5)
        b = substream(7, "train", "epoch", 3).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_names_and_seed_select_streams(self):
        base = substream(7, "train", 3).standard_normal(5)
        for other in (
            substream(7, "train", 4),
            substream(7, "val", 3),
            substream(8, "train", 3),
        ):
            assert not np.array_equal(base, other.standard_normal(5))


class TestCloudText:
    def test_format(self, tmp_path):
        path = write_cloud(tmp_path / "c.xyz", [[1.0, -0.5, 0.0]])
        assert path.read_text() == "1 -0.5 0\n"

    def test_round_trip_precision(self, rng, tmp_path):
        pts = rng.uniform(-1, 1, (100, 3))
        again = read_cloud(write_cloud(tmp_path / "c.xyz", pts))
        np.testing.assert_allclose(again.points, pts, atol=1e-8)
        assert isinstance(again, PointCloud)

    def test_blank_lines_skipped(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("0 0 0\n\n1 1 1\n")
        assert len(read_cloud(path)) == 2

    def test_malformed_line_names_line(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("0 0 0\n1 2\n")
        with pytest.raises(ValueError, match=r"c\.xyz:2"):
            read_cloud(path)
        path.write_text("0 0 0\n0 0 0\n0 x 0\n")
        with pytest.raises(ValueError, match=r"c\.xyz:3"):
            read_cloud(path)

    def test_empty_and_missing(self, tmp_path):
        path = tmp_path / "c.xyz"
        path.write_text("\n")
        with pytest.raises(ValueError, match="empty"):
            read_cloud(path)
        with pytest.raises(OSError):
            read_cloud(tmp_path / "absent.xyz")


def test_write_plane(tmp_path):
    plane = SplitPlane(normal=[0.0, 0.6, 0.8], offset=-0.25)
    text = write_plane(tmp_path / "p.txt", plane).read_text()
    assert text == "0 0.6 0.8 -0.25\n"


def test_write_ply(tmp_path):
    lines = write_ply(tmp_path / "c.ply", np.eye(3)).read_text().splitlines()
    assert lines[0] == "ply"
    assert "element vertex 3" in lines
    assert lines[lines.index("end_header") + 1] == "1 0 0"
    assert len(lines) == 10


def test_write_csv_round_trips_floats(tmp_path):
    value = 1 / 3
    path = write_csv(tmp_path / "log.csv", ["epoch", "loss"], [[0, value]])
    with open(path, newline="") as file:
        rows = list(csv.reader(file))
    assert rows[0] == ["epoch", "loss"]
    assert float(rows[1][1]) == value


class TestJson:
    def test_round_trip(self, tmp_path):
        payload = {"b": [1, 2.5], "a": "x"}
        assert read_json(write_json(tmp_path / "r.json", payload)) == payload

    def test_keys_sorted(self, tmp_path):
        text = write_json(tmp_path / "r.json", {"b": 1, "a": 2}).read_text()
        assert text.index('"a"') < text.index('"b"')

    def test_invalid(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{nope")
        with pytest.raises(ValueError, match="invalid JSON"):
            read_json(path)
