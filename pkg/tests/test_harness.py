import json

import numpy as np
import pytest

from mimufusion.csvio import read_json, write_imu_csv
from mimufusion.errors import EmptyOverlap, LengthMismatch, RateMismatch
from mimufusion.geometry import exp_so3, geodesic_angle
from mimufusion.harness import (
    ExperimentPlan,
    RmseReport,
    emit_report,
    ingest_csv,
    paired_bootstrap_prob,
    rmse_metrics,
    run_experiment,
    true_vimu_state,
)
from mimufusion.preintegration import VimuState
from mimufusion.simulation import (
    SimConfig,
    TrajectoryParams,
    sample_trajectory,
    simulate_imu,
)
from mimufusion.types import Extrinsic, ImuSeries, NoiseSpec


def random_states(rng, n):
    return [VimuState(rotation=exp_so3(rng.normal(size=3)),
                      position=rng.normal(size=3),
                      velocity=rng.normal(size=3)) for _ in range(n)]


def test_rmse_identical_is_zero():
    rng = np.random.default_rng(60)
    states = random_states(rng, 5)
    pos, rot, vel = rmse_metrics(states, states)
    assert pos == 0.0
    assert rot == pytest.approx(0.0, abs=1e-9)
    assert vel == 0.0


def test_rmse_constant_offset():
    rng = np.random.default_rng(61)
    truth = random_states(rng, 8)
    shifted = [VimuState(rotation=t.rotation,
                         position=t.position + np.array([0.01, 0.0, 0.0]),
                         velocity=t.velocity) for t in truth]
    pos, rot, vel = rmse_metrics(shifted, truth)
    assert pos == pytest.approx(0.01, rel=1e-12)
    assert rot == pytest.approx(0.0, abs=1e-9)
    assert vel == 0.0


def test_rmse_matches_direct_recomputation():
    rng = np.random.default_rng(62)
    truth = random_states(rng, 12)
    pred = random_states(rng, 12)
    pos, rot, vel = rmse_metrics(pred, truth)
    pos_ref = np.sqrt(np.mean([
        np.linalg.norm(p.position - t.position) ** 2
        for p, t in zip(pred, truth)]))
    rot_ref = np.sqrt(np.mean([
        geodesic_angle(p.rotation, t.rotation) ** 2
        for p, t in zip(pred, truth)]))
    vel_ref = np.sqrt(np.mean([
        np.linalg.norm(p.velocity - t.velocity) ** 2
        for p, t in zip(pred, truth)]))
    assert pos == pytest.approx(pos_ref, rel=1e-12)
    assert rot == pytest.approx(rot_ref, rel=1e-12)
    assert vel == pytest.approx(vel_ref, rel=1e-12)


def test_rmse_length_mismatch():
    rng = np.random.default_rng(63)
    with pytest.raises(LengthMismatch):
        rmse_metrics(random_states(rng, 3), random_states(rng, 4))
    with pytest.raises(LengthMismatch):
        rmse_metrics([], [])


def test_true_vimu_state_velocity_lever():
    """A body-fixed frame away from the origin moves faster than the
    origin when the body spins; check against a numerical derivative."""
    cfg = SimConfig(freq=200.0, duration=10.0)
    p = np.array([0.1, -0.05, 0.02])
    t = 2.31
    h = 1e-6
    state = true_vimu_state(sample_trajectory(cfg, t), np.eye(3), p)
    lo = sample_trajectory(cfg, t - h)
    hi = sample_trajectory(cfg, t + h)
    v_fd = ((hi.position + hi.rotation @ p)
            - (lo.position + lo.rotation @ p)) / (2 * h)
    np.testing.assert_allclose(state.velocity, v_fd, atol=1e-6)
    s = sample_trajectory(cfg, t)
    np.testing.assert_allclose(state.position, s.position + s.rotation @ p,
                               atol=1e-15)


def write_series(path, start_ns, duration, freq=200.0, seed=0):
    cfg = SimConfig(freq=freq, duration=duration, seed=seed)
    s = simulate_imu(cfg, Extrinsic.identity(), NoiseSpec())
    shifted = ImuSeries(freq=freq, start_ns=start_ns, gyro=s.gyro,
                        accel=s.accel)
    write_imu_csv(path, shifted)
    return shifted


def test_ingest_round_trip(tmp_path):
    a = write_series(tmp_path / "a.csv", 0, 1.0, seed=1)
    b = write_series(tmp_path / "b.csv", 0, 1.0, seed=2)
    out = ingest_csv([tmp_path / "a.csv", tmp_path / "b.csv"])
    assert len(out) == 2
    np.testing.assert_array_equal(out[0].gyro, a.gyro)
    np.testing.assert_array_equal(out[1].accel, b.accel)
    assert out[0].start_ns == out[1].start_ns == 0


def test_ingest_trims_to_overlap(tmp_path):
    write_series(tmp_path / "a.csv", 0, 60.0, seed=1)
    write_series(tmp_path / "b.csv", 50 * 10**9, 60.0, seed=2)
    out = ingest_csv([tmp_path / "a.csv", tmp_path / "b.csv"])
    assert len(out[0]) == len(out[1]) == 2000
    assert out[0].start_ns == 50 * 10**9
    assert out[1].start_ns == 50 * 10**9


def test_ingest_rejects_rate_mismatch(tmp_path):
    write_series(tmp_path / "a.csv", 0, 1.0, freq=200.0)
    write_series(tmp_path / "b.csv", 0, 1.0, freq=400.0)
    with pytest.raises(RateMismatch):
        ingest_csv([tmp_path / "a.csv", tmp_path / "b.csv"])


def test_ingest_rejects_expected_freq(tmp_path):
    write_series(tmp_path / "a.csv", 0, 1.0, freq=200.0)
    with pytest.raises(RateMismatch):
        ingest_csv([tmp_path / "a.csv"], expected_freq=100.0)


def test_ingest_empty_overlap(tmp_path):
    write_series(tmp_path / "a.csv", 0, 1.0)
    write_series(tmp_path / "b.csv", 2 * 10**9, 1.0)
    with pytest.raises(EmptyOverlap):
        ingest_csv([tmp_path / "a.csv", tmp_path / "b.csv"])


def test_ingest_rejects_offset_grid(tmp_path):
    write_series(tmp_path / "a.csv", 0, 1.0)
    # half a period off: the grids never meet
    write_series(tmp_path / "b.csv", 2_500_000, 1.0)
    with pytest.raises(RateMismatch):
        ingest_csv([tmp_path / "a.csv", tmp_path / "b.csv"])


def test_paired_bootstrap_separated():
    a = np.full(20, 1.0)
    b = np.full(20, 2.0)
    assert paired_bootstrap_prob(a, b) == 1.0
    assert paired_bootstrap_prob(b, a) == 0.0
    assert paired_bootstrap_prob(a, a) == 1.0  # <= is inclusive


def test_paired_bootstrap_interleaved():
    rng = np.random.default_rng(64)
    a = rng.normal(size=50)
    b = a + rng.normal(size=50) * 0.05 + 0.02
    prob = paired_bootstrap_prob(a, b, seed=1)
    assert 0.9 < prob <= 1.0


def test_paired_bootstrap_validates():
    with pytest.raises(LengthMismatch):
        paired_bootstrap_prob(np.ones(3), np.ones(4))
    with pytest.raises(LengthMismatch):
        paired_bootstrap_prob(np.ones(0), np.ones(0))


def test_plan_validation():
    with pytest.raises(ValueError):
        ExperimentPlan(variants=("3-imu-wild",))
    with pytest.raises(ValueError):
        ExperimentPlan(variants=())
    with pytest.raises(ValueError):
        ExperimentPlan(extrinsic_samples=0)
    with pytest.raises(ValueError):
        ExperimentPlan(keyframe_interval=0.0)


def test_plan_dict_round_trip():
    plan = ExperimentPlan(extrinsic_samples=3, sequences_per_sample=4,
                          sigma_rot=0.02, master_seed=9,
                          sim=SimConfig(freq=100.0, duration=2.0))
    back = ExperimentPlan.from_dict(plan.to_dict())
    assert back.extrinsic_samples == 3
    assert back.sigma_rot == 0.02
    assert back.master_seed == 9
    assert back.sim.freq == 100.0
    assert back.sim.duration == 2.0
    assert back.variants == plan.variants


TINY_PLAN = ExperimentPlan(
    extrinsic_samples=2,
    sequences_per_sample=3,
    master_seed=7,
    sim=SimConfig(freq=200.0, duration=1.5),
)


def test_run_experiment_deterministic():
    r1 = run_experiment(TINY_PLAN)
    r2 = run_experiment(TINY_PLAN)
    assert r1.to_dict() == r2.to_dict()
    for v in TINY_PLAN.variants:
        assert r1.completed[v] == 6
        for m in ("position", "orientation", "velocity"):
            stats = r1.metrics[v][m]
            assert np.isfinite(stats["mean"])
            assert stats["mean"] > 0
            assert len(stats["per_sample_means"]) == 2
    assert r1.failures == []


def test_run_experiment_subset_of_variants():
    plan = ExperimentPlan(variants=("1-imu-true", "9-imu-perturbed"),
                          extrinsic_samples=1, sequences_per_sample=2,
                          master_seed=3,
                          sim=SimConfig(freq=200.0, duration=1.5))
    report = run_experiment(plan)
    assert set(report.metrics) == {"1-imu-true", "9-imu-perturbed"}


def test_run_experiment_records_failures():
    """A rotation-free trajectory breaks calibration but nothing else;
    the failures must be logged without poisoning other variants."""
    plan = ExperimentPlan(
        variants=("1-imu-true", "2-imu-calibrated"),
        extrinsic_samples=1,
        sequences_per_sample=2,
        master_seed=1,
        sim=SimConfig(freq=200.0, duration=1.5,
                      trajectory=TrajectoryParams.still()),
    )
    report = run_experiment(plan)
    assert report.completed["2-imu-calibrated"] == 0
    assert report.completed["1-imu-true"] == 2
    assert len(report.failures) == 2
    assert all("DegenerateMotion" in f for f in report.failures)
    assert np.isnan(report.metrics["2-imu-calibrated"]["position"]["mean"])
    assert np.isfinite(report.metrics["1-imu-true"]["position"]["mean"])


def test_emit_report_files(tmp_path):
    report = run_experiment(TINY_PLAN, out_dir=tmp_path)
    emit_report(report, tmp_path)
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "plot_data.csv").exists()
    assert (tmp_path / "failures.log").exists()

    back = RmseReport.from_dict(read_json(tmp_path / "report.json"))
    for v in TINY_PLAN.variants:
        np.testing.assert_array_equal(back.per_sample_means(v, "position"),
                                      report.per_sample_means(v, "position"))

    lines = (tmp_path / "plot_data.csv").read_text().strip().split("\n")
    assert lines[0] == "variant,metric,mean,std"
    assert len(lines) == 1 + len(TINY_PLAN.variants) * 3

    trials = [json.loads(l) for l in
              (tmp_path / "trials.jsonl").read_text().strip().split("\n")]
    assert len(trials) == sum(report.completed.values())
    assert {t["variant"] for t in trials} == set(TINY_PLAN.variants)


def test_perturbed_variants_degrade_with_fewer_sensors():
    """Sanity on the tiny run: more sensors never hurt on average, and the
    clean single IMU beats every perturbed array."""
    report = run_experiment(TINY_PLAN)
    pos = {v: report.metrics[v]["position"]["mean"]
           for v in TINY_PLAN.variants}
    assert pos["1-imu-true"] <= pos["2-imu-perturbed"]
    assert pos["1-imu-true"] <= pos["9-imu-perturbed"]
