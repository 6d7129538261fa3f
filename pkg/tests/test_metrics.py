"""Decode / NME / failure-rate oracles and aggregation."""
import numpy as np
import pytest

from dsat.errors import ContractError, ShapeError
from dsat.heatmaps import LandmarkSet, render_landmark_heatmaps
from dsat.metrics import (EvalRecord, NormalizationLayout, aggregate_metrics,
                          decode, failure_rate, gate_report, nme,
                          norm_distance, write_gate_report_csv)


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------

def test_decode_roundtrips_rendered_maps():
    rng = np.random.default_rng(0)
    pts = rng.integers(1, 15, size=(5, 2)).astype(float)
    maps = render_landmark_heatmaps(LandmarkSet(pts), sigma=1.5, h=16)
    decoded, degenerate = decode(maps)
    np.testing.assert_array_equal(decoded, pts)
    assert not degenerate.any()


def test_decode_uniform_map_flags_degenerate():
    decoded, degenerate = decode(np.full((1, 8, 8), 0.25))
    np.testing.assert_array_equal(decoded, [[0.0, 0.0]])
    assert degenerate.all()


def test_decode_tie_takes_lowest_row_major_index():
    hm = np.zeros((1, 6, 6))
    hm[0, 2, 4] = 1.0
    hm[0, 3, 1] = 1.0  # same value, later in row-major order
    decoded, _ = decode(hm)
    np.testing.assert_array_equal(decoded, [[4.0, 2.0]])


def test_decode_matches_exhaustive_scan():
    rng = np.random.default_rng(1)
    maps = rng.random((10, 9, 13))
    decoded, _ = decode(maps)
    for i, hm in enumerate(maps):
        best, bx, by = -np.inf, 0, 0
        for y in range(9):
            for x in range(13):
                if hm[y, x] > best:
                    best, bx, by = hm[y, x], x, y
        assert decoded[i].tolist() == [bx, by]


def test_decode_refinement_shifts_quarter_pixel():
    hm = np.zeros((1, 7, 7))
    hm[0, 3, 3] = 1.0
    hm[0, 3, 4] = 0.5  # larger right neighbor pulls +x
    hm[0, 2, 3] = 0.5  # larger upper neighbor pulls -y
    decoded, _ = decode(hm, refine=True)
    np.testing.assert_allclose(decoded, [[3.25, 2.75]])


def test_decode_rejects_nonfinite():
    hm = np.zeros((1, 4, 4))
    hm[0, 1, 1] = np.nan
    with pytest.raises(ContractError):
        decode(hm)


# ---------------------------------------------------------------------------
# nme
# ---------------------------------------------------------------------------

def test_nme_zero_for_identical_sets():
    pts = np.random.default_rng(2).random((7, 2)) * 10
    gt = LandmarkSet(pts, norm_distance=5.0)
    assert nme(LandmarkSet(pts), gt) == 0.0


def test_nme_345_triangle_is_exactly_100():
    gt = LandmarkSet(np.array([[0.0, 0.0]]), norm_distance=5.0)
    pred = LandmarkSet(np.array([[3.0, 4.0]]))
    assert nme(pred, gt) == 100.0


def test_nme_matches_scalar_summation_oracle():
    rng = np.random.default_rng(3)
    gt_pts = rng.random((5, 2)) * 20
    offsets = rng.normal(size=(5, 2))
    d = 7.3
    gt = LandmarkSet(gt_pts, norm_distance=d)
    pred = LandmarkSet(gt_pts + offsets)
    total = 0.0
    for i in range(5):
        total += np.sqrt(offsets[i, 0] ** 2 + offsets[i, 1] ** 2)
    expected = total / 5 / d * 100.0
    assert abs(nme(pred, gt) - expected) < 1e-12


def test_nme_contract_errors():
    gt = LandmarkSet(np.zeros((3, 2)), norm_distance=0.0)
    with pytest.raises(ContractError):
        nme(LandmarkSet(np.zeros((3, 2))), gt)
    with pytest.raises(ShapeError):
        nme(LandmarkSet(np.zeros((2, 2))),
            LandmarkSet(np.zeros((3, 2)), norm_distance=1.0))


def test_nme_translation_invariance_and_scale():
    rng = np.random.default_rng(4)
    gt_pts = rng.random((6, 2)) * 10
    pred_pts = gt_pts + rng.normal(size=(6, 2))
    shift = np.array([3.7, -2.2])
    base = nme(LandmarkSet(pred_pts), LandmarkSet(gt_pts, norm_distance=4.0))
    moved = nme(LandmarkSet(pred_pts + shift),
                LandmarkSet(gt_pts + shift, norm_distance=4.0))
    assert base == pytest.approx(moved, rel=1e-12)
    halved_d = nme(LandmarkSet(pred_pts), LandmarkSet(gt_pts, norm_distance=2.0))
    assert halved_d == pytest.approx(2 * base, rel=1e-12)


# ---------------------------------------------------------------------------
# failure rate
# ---------------------------------------------------------------------------

def test_failure_rate_cases():
    assert failure_rate([1.0, 2.0, 3.0], 10.0) == 0.0
    assert failure_rate([5.0, 15.0], 10.0) == 50.0
    assert failure_rate([10.0, 10.0, 10.0], 10.0) == 0.0  # strict comparison


def test_failure_rate_monotone_in_threshold():
    rng = np.random.default_rng(5)
    nmes = (rng.random(200) * 20).tolist()
    rates = [failure_rate(nmes, t) for t in (2.0, 5.0, 8.0, 12.0)]
    assert all(a >= b for a, b in zip(rates, rates[1:]))


def test_failure_rate_contract_errors():
    with pytest.raises(ContractError):
        failure_rate([], 10.0)
    with pytest.raises(ContractError):
        failure_rate([1.0], 0.0)


# ---------------------------------------------------------------------------
# norm_distance
# ---------------------------------------------------------------------------

def test_norm_distance_eye_corners():
    pts = np.zeros((12, 2))
    pts[0] = (0.0, 0.0)
    pts[3] = (6.0, 8.0)
    gt = LandmarkSet(pts + 1.0)  # translation must not matter
    gt.points[0] = (0.0, 0.0)
    gt.points[3] = (6.0, 8.0)
    assert norm_distance(gt, "inter-ocular") == 10.0


def test_norm_distance_unit_square_diagonal():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert norm_distance(LandmarkSet(pts), "diagonal") == pytest.approx(np.sqrt(2.0))


def test_norm_distance_synthetic_layout():
    from dsat.synthetic import generate_sample
    s = generate_sample(0, "neutral", image_size=64)
    gt = LandmarkSet(s.landmarks)
    expect_io = np.linalg.norm(s.landmarks[0] - s.landmarks[3])
    expect_ip = np.linalg.norm(s.landmarks[4] - s.landmarks[5])
    assert norm_distance(gt, "inter-ocular") == pytest.approx(expect_io)
    assert norm_distance(gt, "inter-pupil") == pytest.approx(expect_ip)
    assert norm_distance(gt, "inter-ocular") > norm_distance(gt, "inter-pupil")


def test_norm_distance_errors():
    pts = np.zeros((12, 2))
    with pytest.raises(ContractError):
        norm_distance(LandmarkSet(pts), "inter-ocular")
    with pytest.raises(ContractError):
        norm_distance(LandmarkSet(np.ones((4, 2))), "nope")


# ---------------------------------------------------------------------------
# gate_report / aggregation
# ---------------------------------------------------------------------------

def make_record(sid, ratios, nme_val=1.0):
    return EvalRecord(sample_id=sid, nme_percent=nme_val,
                      per_landmark_errors=[nme_val], norm_distance=1.0,
                      activation_ratios=ratios)


def test_gate_report_single_cluster_mean():
    records = [make_record("a", [(0, 0.25)]), make_record("b", [(0, 0.75)])]
    rows = gate_report(records, {"a": "neutral", "b": "neutral"})
    assert rows == [{"cluster": "neutral", "dsa_index": 0, "mean_ratio": 0.5,
                     "std_ratio": 0.25, "count": 2}]


def test_gate_report_symmetric_clusters():
    records = [make_record("a", [(0, 0.5)]), make_record("b", [(0, 0.5)])]
    rows = gate_report(records, {"a": "x", "b": "y"})
    assert rows[0]["mean_ratio"] == rows[1]["mean_ratio"] == 0.5


def test_gate_report_matches_spreadsheet_recomputation():
    rng = np.random.default_rng(6)
    records, labels = [], {}
    table: dict[tuple[str, int], list[float]] = {}
    for i in range(50):
        sid = f"s{i}"
        label = ("easy", "hard")[i % 2]
        ratios = [(0, float(rng.random())), (1, float(rng.random()))]
        records.append(make_record(sid, ratios))
        labels[sid] = label
        for idx, r in ratios:
            table.setdefault((label, idx), []).append(r)
    rows = gate_report(records, labels)
    for row in rows:
        vals = table[(row["cluster"], row["dsa_index"])]
        assert row["mean_ratio"] == pytest.approx(sum(vals) / len(vals), abs=1e-12)
        mean = sum(vals) / len(vals)
        var = sum((v - mean) ** 2 for v in vals) / len(vals)
        assert row["std_ratio"] == pytest.approx(np.sqrt(var), abs=1e-12)


def test_gate_report_unknown_label_errors():
    with pytest.raises(ContractError):
        gate_report([make_record("a", [(0, 0.5)])], {})


def test_gate_report_csv(tmp_path):
    rows = gate_report([make_record("a", [(0, 0.5)])], {"a": "neutral"})
    path = tmp_path / "report.csv"
    write_gate_report_csv(rows, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "cluster,dsa_index,mean_ratio,std_ratio,count"
    assert lines[1].startswith("neutral,0,0.5,")


def test_aggregate_metrics_per_cluster():
    records = [make_record("a", [], nme_val=5.0), make_record("b", [], nme_val=15.0),
               make_record("c", [], nme_val=9.0)]
    labels = {"a": "easy", "b": "hard", "c": "easy"}
    agg = aggregate_metrics(records, labels, fr_threshold=10.0)
    assert agg["overall"]["count"] == 3
    assert agg["overall"]["nme_mean"] == pytest.approx((5 + 15 + 9) / 3)
    assert agg["overall"]["fr_percent"] == pytest.approx(100 / 3)
    assert agg["per_cluster"]["easy"]["nme_mean"] == 7.0
    assert agg["per_cluster"]["hard"]["fr_percent"] == 100.0


def test_eval_record_nme_recomputable_from_fields():
    rng = np.random.default_rng(7)
    errors = rng.random(12).tolist()
    d = 3.7
    rec = EvalRecord(sample_id="s", nme_percent=float(np.mean(errors) / d * 100),
                     per_landmark_errors=errors, norm_distance=d)
    assert rec.nme_percent == pytest.approx(np.mean(rec.per_landmark_errors)
                                            / rec.norm_distance * 100)
