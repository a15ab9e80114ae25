import numpy as np
import pytest

from panoseg import cloudio
from panoseg.core import InstanceCandidate, Labeling, PointCloud
from panoseg.errors import ConfigError, FormatError, ParseError


def test_read_minimal_cloud(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("x y z\n1 2 3\n4 5 6\n")
    cloud, labeling, features = cloudio.read_cloud(path)
    assert len(cloud) == 2
    assert labeling is None and features is None
    np.testing.assert_allclose(cloud.positions[1], [4, 5, 6])


def test_read_cloud_with_labels(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("x y z sem ins\n0 0 0 1 0\n0 0 1 0 -1\n")
    _, labeling, _ = cloudio.read_cloud(path)
    np.testing.assert_array_equal(labeling.semantic, [1, 0])
    np.testing.assert_array_equal(labeling.instance, [0, -1])


def test_short_row_reports_line_number(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("x y z\n1 2 3\n4 5\n")
    with pytest.raises(ParseError) as err:
        cloudio.read_cloud(path)
    assert err.value.line_no == 3


def test_missing_coordinate_column(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("x y sem\n1 2 0\n")
    with pytest.raises(FormatError):
        cloudio.read_cloud(path)


def test_non_integral_label_rejected(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("x y z sem\n0 0 0 1.5\n")
    with pytest.raises(ParseError):
        cloudio.read_cloud(path)


def test_unknown_columns_become_attributes(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("x y z intensity\n0 0 0 7.5\n")
    cloud, _, _ = cloudio.read_cloud(path)
    np.testing.assert_allclose(cloud.attributes["intensity"], [7.5])


def test_duplicate_header_columns_rejected(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("x y z z\n0 0 0 0\n")
    with pytest.raises(FormatError):
        cloudio.read_cloud(path)


def test_missing_file_is_a_format_error(tmp_path):
    with pytest.raises(FormatError):
        cloudio.read_cloud(tmp_path / "absent.txt")
    with pytest.raises(FormatError):
        cloudio.read_config(tmp_path / "absent.cfg")
    with pytest.raises(FormatError):
        cloudio.read_candidates(tmp_path / "absent.txt")


def test_probability_matrix_requires_contiguous_columns():
    cols = {"p_0": np.zeros(2), "p_2": np.zeros(2)}
    with pytest.raises(FormatError, match="p_1"):
        cloudio.probability_matrix(cols)


def test_write_read_write_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    cloud = PointCloud(rng.normal(scale=100.0, size=(50, 3)))
    labeling = Labeling(rng.integers(0, 4, 50), rng.integers(-1, 6, 50))
    features = cloudio.feature_columns(
        np.full((50, 3), 1.0 / 3.0), rng.normal(size=(50, 3)), rng.normal(size=(50, 5))
    )
    first = tmp_path / "a.txt"
    second = tmp_path / "b.txt"
    cloudio.write_cloud(first, cloud, labeling, features)
    cloud2, labeling2, features2 = cloudio.read_cloud(first)
    cloudio.write_cloud(second, cloud2, labeling2, features2)
    assert first.read_bytes() == second.read_bytes()
    np.testing.assert_array_equal(labeling.semantic, labeling2.semantic)
    np.testing.assert_array_equal(labeling.instance, labeling2.instance)


def test_roundtrip_preserves_column_set(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("x y z sem ins off_x off_y off_z\n0 0 0 1 0 0.1 0.2 0.3\n")
    cloud, labeling, features = cloudio.read_cloud(path)
    out = tmp_path / "d.txt"
    cloudio.write_cloud(out, cloud, labeling, features)
    assert out.read_text().splitlines()[0] == "x y z sem ins off_x off_y off_z"


# --- config files -----------------------------------------------------------


def test_profile_defaults():
    npm3d = cloudio.read_config(None, "npm3d")
    assert npm3d.voxel_size == 0.12
    assert npm3d.cylinder_radius == 16.0
    assert npm3d.score_threshold == 0.6
    forest = cloudio.read_config(None, "forest")
    assert forest.voxel_size == 0.2
    assert forest.cylinder_radius == 4.0
    assert forest.score_threshold == 0.5
    for config in (npm3d, forest):
        assert config.region_growing_radius == 0.03
        assert config.meanshift_bandwidth == 0.6
        assert config.min_cluster_size == 10
        assert config.nms_iou_threshold == 0.3
        assert config.merge_iou_threshold == 0.01


def test_config_override(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("min_cluster_size = 25\n")
    assert cloudio.read_config(path, "npm3d").min_cluster_size == 25


def test_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("vox_size = 0.1\n")
    with pytest.raises(ConfigError):
        cloudio.read_config(path)


def test_config_bad_value_names_key(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("voxel_size = tiny\n")
    with pytest.raises(ConfigError, match="voxel_size"):
        cloudio.read_config(path)


@pytest.mark.parametrize(
    "line",
    ["voxel_size = -1", "score_threshold = 1.5", "setting = VI", "min_cluster_size = 0"],
)
def test_config_validation(tmp_path, line):
    path = tmp_path / "cfg.txt"
    path.write_text(line + "\n")
    with pytest.raises(ConfigError):
        cloudio.read_config(path)


def test_empty_config_path_gives_pure_defaults():
    assert cloudio.read_config("", "forest") == cloudio.default_config("forest")


# --- candidate dumps --------------------------------------------------------


def test_config_duplicate_key_rejected(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("seed = 1\nseed = 2\n")
    with pytest.raises(ParseError):
        cloudio.read_config(path)


def test_candidate_parse_errors(tmp_path):
    headerless = tmp_path / "a.txt"
    headerless.write_text("1 0.5 offset 2 3 4\n")
    with pytest.raises(ParseError):
        cloudio.read_candidates(headerless)
    short = tmp_path / "b.txt"
    short.write_text("block 0 0\n1 0.5 offset 3 7 8\n")
    with pytest.raises(ParseError):
        cloudio.read_candidates(short)


def test_candidates_roundtrip(tmp_path):
    path = tmp_path / "cands.txt"
    blocks = [
        ((0.0, 0.0), [InstanceCandidate(np.array([1, 4, 9]), 2, 0.75, "offset")]),
        ((16.0, 0.0), []),
    ]
    cloudio.write_candidates(path, blocks)
    back = cloudio.read_candidates(path)
    assert back[0][0] == (0.0, 0.0)
    cand = back[0][1][0]
    assert cand.class_id == 2 and cand.score == 0.75 and cand.origin == "offset"
    np.testing.assert_array_equal(cand.point_ids, [1, 4, 9])
    assert back[1] == ((16.0, 0.0), [])
