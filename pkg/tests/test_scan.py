import pytest

from ddbh import star_params
from ddbh.scan import PhaseRecord, name_transitions, parse_range, point_rng, scan_j, scan_ua


def test_parse_range():
    assert parse_range("0:1:0.25") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_range("0.5, 2,3.5") == [0.5, 2.0, 3.5]
    assert parse_range("1:0:0.5") == []
    assert len(parse_range("0:6:0.05")) == 121
    with pytest.raises(ValueError):
        parse_range("0:1:0")


def rec(j, label):
    return PhaseRecord(j, "soe", label, "steady", 1.0)


def test_transition_naming():
    labels = ["homogeneous", "ripple", "ripple", "stationary_soliton", "oscillating_soliton", "unknown", "homogeneous"]
    names = name_transitions([rec(0.1 * i, lab) for i, lab in enumerate(labels)])
    assert names == {"J1": (0, 1), "J2": (2, 3), "J3": (3, 4), "J4": (5, 6)}


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        rec(0.0, "breather")


def test_point_rng_is_per_point():
    a = point_rng(42, 1.6).uniform()
    assert a == point_rng(42, 1.6).uniform()
    assert a != point_rng(42, 1.8).uniform()


def test_empty_scan():
    result = scan_j(star_params(5), [], tier="dnls")
    assert result.records == [] and result.transitions == []


def test_checkpoint_resume_is_deterministic(tmp_path):
    template = star_params(6)
    js = [0.0, 0.2, 0.4]
    kw = dict(tier="soe", t_end=30.0, refine=False)
    full = scan_j(template, js, checkpoint=tmp_path / "a", **kw)
    log = tmp_path / "a" / "records.jsonl"
    assert len(log.read_text().splitlines()) == 3
    # simulate an interruption after the second point
    log.write_text("\n".join(log.read_text().splitlines()[:2]) + "\n")
    resumed = scan_j(template, js, checkpoint=tmp_path / "a", **kw)
    for x, y in zip(full.records, resumed.records):
        assert (x.label, x.status) == (y.label, y.status)
        assert x.center_amplitude == pytest.approx(y.center_amplitude, abs=1e-12)
    assert len(log.read_text().splitlines()) == 3
    with pytest.raises(ValueError):
        scan_j(template, js[:2], checkpoint=tmp_path / "a", **kw)


def test_dnls_cold_scan_labels_are_valid():
    result = scan_j(star_params(8), [0.0, 0.5], tier="dnls", mode="cold", t_end=30.0, refine=False)
    assert [r.j for r in result.records] == [0.0, 0.5]
    assert result.label_at(0.5) is not None


def test_ua_grid():
    grid = scan_ua([-0.5, 0.0], [3.0], grid=5)
    rows = list(grid.rows())
    assert rows[0] == (-0.5, 3.0, 3, 1)
    assert rows[1][2] == 1 and rows[1][3] == 1
    with pytest.raises(ValueError):
        scan_ua([0.0], [1.0], j=1.0)
