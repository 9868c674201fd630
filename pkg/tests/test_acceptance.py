"""Acceptance suite: one test per gated criterion, one PASS/FAIL line each.

The desk-scale reference experiment (road course, 64x36 frames, ~10,000
records, default model, 20 epochs, seed 7) is built once per session and
shared by the training-quality, closed-loop, and saliency criteria.
"""

import time

import numpy as np
import pytest

from ignition import dataset as D
from ignition import model as M
from ignition import track as T
from ignition import trainer as TR
from ignition.controller import drive
from ignition.dynamics import CarParams, CarState
from ignition.model import DrivingModel, ModelConfig
from ignition.oracle import OracleParams
from ignition.render import (
    CameraParams,
    horizontal_flip,
    localize,
    mirror_world,
    render,
    render_local,
)

from test_autodiff import run_all_gradient_checks

pytestmark = pytest.mark.acceptance

REFERENCE_SEED = 7
REFERENCE_DURATION_S = 1000.0  # ~10,000 records at 10 Hz
REFERENCE_SIZE = (64, 36)


@pytest.fixture(scope="session")
def verdict(request):
    """One PASS/FAIL line per criterion, emitted past pytest's capture."""
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def emit(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}: {name} — {detail}"
        if capman is not None:
            with capman.global_and_fixture_disabled():
                print(f"\n{line}", flush=True)
        else:
            print(line, flush=True)
        assert ok, line

    return emit


@pytest.fixture(scope="session")
def road_course():
    return T.load_bundled("road_course")


@pytest.fixture(scope="session")
def reference_dataset(tmp_path_factory, road_course):
    out = tmp_path_factory.mktemp("reference") / "data"
    D.synthesize(road_course, CarParams(), OracleParams(), REFERENCE_DURATION_S,
                 REFERENCE_SIZE, REFERENCE_SEED, out)
    return D.Dataset(out)


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory, reference_dataset):
    """Trained model for the desk-scale reference experiment (slow)."""
    out = tmp_path_factory.mktemp("reference") / "run"
    TR.train(reference_dataset, ModelConfig(),
             TR.TrainConfig(epochs=20, seed=REFERENCE_SEED), out)
    model, sidecar = DrivingModel.load(out / "best.ckpt")
    return model, sidecar["normalization"], out


class TestGradientChecks:
    def test_every_op_fd_checked(self, verdict):
        t0 = time.perf_counter()
        worst = run_all_gradient_checks(n_shapes=10, seed=0, tol=1e-4)
        elapsed = time.perf_counter() - t0
        ok = max(worst.values()) < 1e-4 and elapsed < 60.0
        verdict("gradient checks", ok,
                f"{len(worst)} ops x 10 shapes, worst rel err "
                f"{max(worst.values()):.2e} (tol 1e-4), {elapsed:.1f}s (< 60s)")


class TestOracleLabels:
    def test_label_properties(self, reference_dataset, verdict):
        throttle = reference_dataset.values[:, 2]
        brake = reference_dataset.values[:, 3]
        binary = bool(np.isin(throttle, (0.0, 1.0)).all()
                      and np.isin(brake, (0.0, 1.0)).all())
        exclusive = bool((throttle * brake == 0.0).all())
        stats = D.label_stats(reference_dataset)
        mode_bin = int(np.argmax(stats["steering_hist"]))
        mode_center = -180.0 + 10.0 * mode_bin + 5.0
        centered = abs(mode_center) <= 10.0
        verdict("oracle labels", binary and exclusive and centered,
                f"pedals binary={binary}, throttle*brake==0 for 100%={exclusive}, "
                f"steering mode bin center {mode_center:+.0f} deg (|.| <= 10)")


class TestOverfitProbes:
    def test_classification_reaches_100_percent(self, reference_dataset, verdict):
        result = TR.overfit_classification_probe(
            reference_dataset, ModelConfig(), n_records=100, max_steps=2000,
            seed=REFERENCE_SEED)
        ok = (result["steps_to_perfect"] is not None
              and result["steer_accuracy"] == 1.0
              and result["accel_accuracy"] == 1.0)
        verdict("overfit probe (classification)", ok,
                f"100% both heads on 100 records in "
                f"{result['steps_to_perfect']} steps (<= 2000)")

    def test_regression_target_scaling(self, reference_dataset, verdict):
        result = TR.overfit_regression_probe(reference_dataset,
                                             seed=REFERENCE_SEED)
        ok = result["ratio"] >= 10.0
        verdict("overfit probe (regression target scaling)", ok,
                f"raw-[0,1] plateau / (-100,100) plateau = "
                f"{result['ratio']:.1f}x (>= 10x), relative to initial loss")


class TestReferenceRun:
    def test_test_split_metrics(self, reference_run, reference_dataset, verdict):
        model, _, _ = reference_run
        snap = TR.evaluate(model, reference_dataset, "test")
        ok = snap.accel_accuracy >= 0.86 and snap.steering_within_20deg >= 0.58
        verdict("desk-scale reference run", ok,
                f"accel_accuracy {snap.accel_accuracy:.3f} (>= 0.86), "
                f"steering_within_20deg {snap.steering_within_20deg:.3f} (>= 0.58); "
                f"exact-bucket steering {snap.steering_accuracy:.3f} (ungated)")


class TestClosedLoop:
    def test_oracle_bypass_both_tracks(self, verdict):
        details = []
        ok = True
        for name in T.BUNDLED_TRACKS:
            report = drive(None, None, T.load_bundled(name), duration_s=120,
                           seed=REFERENCE_SEED, oracle_bypass=True)
            ok &= report.laps_completed >= 1.0 and report.interventions == 0
            details.append(f"{name}: {report.laps_completed:.2f} laps, "
                           f"{report.interventions} interventions")
        verdict("closed loop (oracle bypass)", ok,
                "; ".join(details) + " (>= 1 lap, 0 interventions each)")

    def test_trained_model_on_training_track(self, reference_run, road_course, verdict):
        model, normalization, _ = reference_run
        report = drive(model, normalization, road_course, duration_s=120,
                       seed=REFERENCE_SEED)
        ok = report.laps_completed >= 0.5 and report.interventions <= 4
        verdict("closed loop (trained model)", ok,
                f"laps_completed {report.laps_completed:.2f} (>= 0.5), "
                f"interventions {report.interventions} (<= 4) over 120s")


class TestFlipEquivariance:
    def test_bit_exact_on_100_random_states(self, road_course, verdict):
        cam = CameraParams(render_noise_sigma=0.0)
        rng = np.random.default_rng(5)
        mismatches = 0
        for _ in range(100):
            state = CarState(
                x=float(rng.uniform(-200, 200)), y=float(rng.uniform(-200, 200)),
                heading=float(rng.uniform(-np.pi, np.pi)),
                speed=float(rng.uniform(0, 60)))
            geom = localize(road_course, state)
            a = render_local(geom, cam)
            b = render_local(mirror_world(geom), cam)
            mismatches += not np.array_equal(b.pixels, horizontal_flip(a).pixels)
        verdict("renderer flip equivariance", mismatches == 0,
                f"{100 - mismatches}/100 random states bit-exact, noise off")


class TestDeterminism:
    def test_datasets_and_metrics_histories(self, tmp_path, road_course, verdict):
        paths = []
        for name in ("a", "b"):
            out = tmp_path / name
            D.synthesize(road_course, CarParams(), OracleParams(), 10.0,
                         REFERENCE_SIZE, 3, out)
            paths.append(out)
        same_data = ((paths[0] / "records.bin").read_bytes()
                     == (paths[1] / "records.bin").read_bytes()
                     and (paths[0] / "manifest.json").read_bytes()
                     == (paths[1] / "manifest.json").read_bytes())

        ds = D.Dataset(paths[0])
        config = ModelConfig(base_channels=4, stage_blocks=(1, 1, 1, 1), fc_dim=8)
        histories = []
        for name in ("ra", "rb"):
            _, hist = TR.train(ds, config, TR.TrainConfig(epochs=2, seed=3),
                               tmp_path / name)
            histories.append([s.to_dict() for s in hist])
        same_hist = histories[0] == histories[1]
        verdict("determinism", same_data and same_hist,
                f"byte-identical datasets={same_data}, "
                f"identical metrics histories={same_hist}")


class TestPerformance:
    def test_render_control_and_conv(self, road_course, reference_run, verdict):
        model, normalization, _ = reference_run

        state = CarState(x=0.0, y=0.0, heading=0.0, speed=20.0)
        render(road_course, state, size=(64, 36), seed=0)  # warm the jit
        t0 = time.perf_counter()
        n = 200
        for i in range(n):
            render(road_course, state, size=(64, 36), seed=i)
        render_ms = (time.perf_counter() - t0) / n * 1e3

        drive(model, normalization, road_course, duration_s=0.5, seed=0)
        t0 = time.perf_counter()
        drive(model, normalization, road_course, duration_s=2, seed=0)
        control_ms = (time.perf_counter() - t0) / 20 * 1e3

        import ignition.autodiff as ad
        from ignition.autodiff import Tensor
        rng = np.random.default_rng(14)
        x = rng.standard_normal((8, 36, 64, 16)).astype(np.float32)
        w = rng.standard_normal((16, 16, 3, 3)).astype(np.float32)
        b = rng.standard_normal(16).astype(np.float32)
        xt, wt, bt = Tensor(x), Tensor(w), Tensor(b)
        ad.conv2d(xt, wt, bt, padding=1)
        t0 = time.perf_counter()
        for _ in range(10):
            ad.conv2d(xt, wt, bt, padding=1)
        fast = (time.perf_counter() - t0) / 10
        t0 = time.perf_counter()
        ad.naive_conv2d(x, w, b, padding=1)
        speedup = (time.perf_counter() - t0) / fast

        ok = render_ms < 1.0 and control_ms < 100.0 and speedup >= 20.0
        verdict("performance", ok,
                f"64x36 render {render_ms:.2f} ms (< 1), control step "
                f"{control_ms:.1f} ms (< 100), conv {speedup:.0f}x naive (>= 20x)")


class TestSaliency:
    def test_throttle_mass_below_horizon(self, reference_run, reference_dataset, verdict):
        model, normalization, _ = reference_run
        horizon = CameraParams().horizon_row(model.config.input_height)
        val_idx = reference_dataset.split_indices("val")
        good = 0
        for i in val_idx:
            z = ((reference_dataset.frames[i].astype(np.float32) / 255.0
                  - normalization["mean"]) / normalization["std"])
            s = M.saliency(model, z, float(reference_dataset.values[i, 0]),
                           accel_logit=M.ACCEL_THROTTLE)
            good += float(s[horizon:, :].sum()) > 0.5
        frac = good / len(val_idx)
        verdict("saliency sanity", frac >= 0.80,
                f"THROTTLE-logit saliency >50% mass below horizon row on "
                f"{frac:.1%} of {len(val_idx)} val frames (>= 80%)")
