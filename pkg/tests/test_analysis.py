import math

import numpy as np
import pytest

from platewave import analysis as an
from platewave import dihedral as d4
from platewave import models
from platewave.signals import dataset as dsm
from platewave.signals.config import PlateConfig, SymmetryBreakSpec

SMALL = (2, 2, 2, 2, 2, 4)


@pytest.fixture(scope="module")
def symmetric():
    return dsm.generate(PlateConfig(grid=5, noise=0.0), SymmetryBreakSpec(), seed=0)


@pytest.fixture(scope="module")
def jittered():
    return dsm.generate(PlateConfig(grid=5, noise=0.0), SymmetryBreakSpec(gain_jitter=0.1), seed=0)


# input equivariance

def test_symmetric_baseline_has_zero_r0(symmetric):
    mean, std, values = an.baseline_equivariance_error(symmetric.baselines)
    assert values.shape == (6,)
    assert mean <= 1e-12 and std <= 1e-12


def test_r0_positive_when_broken(jittered):
    assert an.baseline_equivariance_error(jittered.baselines)[0] > 1e-3


def test_r0_rejects_zero_record():
    with pytest.raises(ValueError):
        an.baseline_equivariance_error(np.zeros((4, 4, 10)))


def test_r0_ignores_diagonal(rng):
    V = np.broadcast_to(rng.normal(size=10), (4, 4, 10)).copy()
    V[[0, 1, 2, 3], [0, 1, 2, 3]] = rng.normal(size=(4, 10))
    assert an.baseline_equivariance_error(V)[0] == 0.0


def test_first_arrival_index_inside_record():
    i = an.first_arrival_index(PlateConfig())
    assert 0 <= i < 158


def test_r_field_zero_on_symmetric_data(symmetric):
    res = an.input_equivariance_field(symmetric)
    assert res.skipped == 0
    assert np.nanmax(res.values) <= 1e-12


def test_gain_jitter_raises_median_r(symmetric, jittered):
    quiet = np.median(an.input_equivariance_field(symmetric).values)
    noisy = np.median(an.input_equivariance_field(jittered).values)
    assert noisy > quiet
    assert noisy > 1e-3


def test_centre_r_is_pure_asymmetry(jittered):
    res = an.input_equivariance_field(jittered)
    c = int(np.argmin(np.linalg.norm(jittered.positions, axis=1)))
    V = jittered.signals[c] - jittered.baselines.mean(axis=0)
    assert res.values[c] == pytest.approx(an.baseline_equivariance_error(V)[0], rel=1e-12)


def test_orbit_average_independent_of_representative(jittered):
    res = an.input_equivariance_field(jittered)
    keys = {tuple(np.round(p, 6)): i for i, p in enumerate(jittered.positions)}
    for x in jittered.positions[:6]:
        orbit = {keys[tuple(np.round(d4.act_on_points(g, x), 6))] for g in d4.elements()}
        for g in d4.elements():
            y = d4.act_on_points(g, x)
            orbit_y = {keys[tuple(np.round(d4.act_on_points(h, y), 6))] for h in d4.elements()}
            assert orbit_y == orbit
        assert np.isfinite(res.values[sorted(orbit)].mean())


def test_missing_partner_is_skipped(symmetric, caplog):
    part = symmetric.subset(np.array([0, 1, 2]))
    caplog.set_level("INFO")
    res = an.input_equivariance_field(part)
    assert res.skipped > 0
    assert "no orbit partner" in caplog.text


# learned equivariance

def test_exact_model_q_is_zero(jittered):
    model = models.build(models.ModelSpec("exact", "locate", SMALL, seed=3))
    res = an.learned_equivariance_field(model, jittered)
    assert res.values.max() <= 1e-8


def test_ordinary_model_q_is_not_zero(jittered):
    model = models.build(models.ModelSpec("ordinary", "locate", SMALL, seed=3))
    assert an.learned_equivariance_field(model, jittered).values.max() > 1e-2


def test_approximate_at_init_matches_exact(jittered):
    ex = models.build(models.ModelSpec("exact", "locate", SMALL, seed=3))
    ap = models.build(models.ModelSpec("approximate", "locate", SMALL, seed=3))
    a = an.learned_equivariance_field(ex, jittered).values
    b = an.learned_equivariance_field(ap, jittered).values
    assert np.array_equal(a, b)


def test_detector_q_is_invariance(jittered):
    model = models.build(models.ModelSpec("exact", "detect", SMALL, seed=1))
    assert an.learned_equivariance_field(model, jittered, normalized=True).values.max() <= 1e-8


# heatmaps

def _coverage(centre, pixel_centre, footprint=40.0, pixel=5.0):
    """Area of a pixel covered by the footprint square, by interval intersection."""
    ov = 1.0
    for a, b in zip(centre, pixel_centre):
        lo = max(a - footprint / 2, b - pixel / 2)
        hi = min(a + footprint / 2, b + pixel / 2)
        ov *= max(hi - lo, 0.0)
    return ov


def test_single_sample_patch_matches_coverage_oracle():
    x = (35.0, -60.0)
    grid = an.render_heatmap([x], [2.5])
    c = grid.centres
    expected = np.zeros((51, 51), dtype=bool)
    for i, yc in enumerate(c):
        for j, xc in enumerate(c):
            expected[i, j] = math.isclose(_coverage(x, (xc, yc)), 25.0)
    expected[int(np.argmin(abs(c - x[1]))), int(np.argmin(abs(c - x[0])))] = True
    assert expected.sum() == 49
    assert np.array_equal(~grid.missing, expected)
    assert np.all(grid.values[expected] == 2.5)


def test_pixel_mean_and_mass():
    grid = an.render_heatmap([(0.0, 0.0), (0.0, 0.0)], [1.0, 3.0])
    assert np.nanmax(grid.values) == 2.0 and np.nanmin(grid.values) == 2.0
    rng = np.random.default_rng(0)
    pos = rng.integers(-25, 26, size=(30, 2)) * 5.0
    vals = rng.normal(size=30)
    grid = an.render_heatmap(pos, vals)
    # every sample credits exactly 49 pixels when its patch lies inside the image
    inside = np.all(np.abs(pos) <= 125 - 15, axis=1)
    total = grid.sums.sum()
    edge = an.render_heatmap(pos[~inside], vals[~inside]).sums.sum()
    assert total - edge == pytest.approx(49 * vals[inside].sum())


def test_empty_heatmap_all_missing(tmp_path):
    grid = an.render_heatmap(np.zeros((0, 2)), [])
    assert grid.missing.all()
    assert np.isnan(grid.values).all()
    grid.to_pgm(tmp_path / "e.pgm")
    assert (tmp_path / "e.pgm").read_bytes().endswith(bytes([255]) * 51 * 51)


def test_off_lattice_snaps_with_warning(caplog):
    grid = an.render_heatmap([(1.0, 0.0)], [1.0])
    assert "snapped" in caplog.text
    assert np.array_equal(grid.counts, an.render_heatmap([(0.0, 0.0)], [1.0]).counts)


def test_heatmap_files(tmp_path):
    grid = an.render_heatmap([(0.0, 120.0)], [4.0])
    grid.to_csv(tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert len(rows) == 51 and all(len(r.split(",")) == 51 for r in rows)
    assert rows[0].split(",")[25] == "4.0"          # top row is the largest y
    grid.to_pgm(tmp_path / "h.pgm")
    data = (tmp_path / "h.pgm").read_bytes()
    assert data.startswith(b"P5\n51 51\n255\n") and len(data) == len(b"P5\n51 51\n255\n") + 51 * 51


def test_mismatched_lengths():
    with pytest.raises(ValueError):
        an.render_heatmap([(0.0, 0.0)], [1.0, 2.0])


# symmetry weights

def test_untrained_report():
    model = models.build(models.ModelSpec("approximate", "locate", SMALL))
    rep = an.symmetry_weight_report(model)
    assert [r["layer"] for r in rep["layers"]] == ["block1", "block2", "block3", "block4", "block5", "head"]
    assert all(r["omega"] == [1.0] * 8 and r["max_deviation"] == 0.0 for r in rep["layers"])


def test_hand_set_weights_closed_form():
    model = models.build(models.ModelSpec("approximate", "locate", SMALL))
    raw = np.zeros(8)
    raw[2] = 8.0
    model.params["block3.symmetry"].data = raw
    w = np.array(an.symmetry_weight_report(model)["layers"][2]["omega"])
    big = 8 * math.e / (math.e + 7)
    assert w[2] == pytest.approx(big, rel=1e-14)
    assert np.allclose(np.delete(w, 2), 8 / (math.e + 7), rtol=1e-14)
    assert w.sum() == pytest.approx(8.0, abs=1e-12)


def test_report_requires_approximate():
    with pytest.raises(ValueError):
        an.symmetry_weight_report(models.build(models.ModelSpec("exact", "locate", SMALL)))


def test_depth_trend():
    t = an.depth_trend([0.06, 0.05, 0.03, 0.02, 0.01, 0.005])
    assert t["decreasing"] and t["slope"] < 0
    assert not an.depth_trend([0.01, 0.03, 0.02])["decreasing"]
