import numpy as np
import pytest

from linpath import (
    Hyperparams,
    build_model,
    evaluate,
    lerp,
    mlp_spec,
    resnet_mini_spec,
    synthetic_blobs,
    train,
)
from linpath.analysis import barrier_height
from linpath.errors import ShapeMismatchError
from linpath.interp import (
    PathCurve,
    alpha_grid,
    bn_recalibrate,
    evaluate_path,
    evaluate_path_values,
)
from linpath.nn.engine import EvalResult
from linpath.nn.params import Manifest, ParamVector


def _vec(values, dtype=np.float64):
    manifest = Manifest.from_named([("w", (len(values),), "weight")])
    return ParamVector(np.array(values, dtype=dtype), manifest)


def test_lerp_arithmetic():
    out = lerp(_vec([1.0, 3.0]), _vec([3.0, 7.0]), 0.25)
    assert np.array_equal(out.values, [1.5, 4.0])


def test_lerp_endpoints_bit_exact():
    a = _vec([0.1, 0.2, 0.3], dtype=np.float32)
    b = _vec([7.0, 8.0, 9.0], dtype=np.float32)
    assert np.array_equal(lerp(a, b, 0.0).values, a.values)
    assert np.array_equal(lerp(a, b, 1.0).values, b.values)


def test_lerp_identical_endpoints():
    a = _vec([2.0, -5.0])
    for alpha in (0.0, 0.3, 0.5, 0.99, 1.0):
        assert np.array_equal(lerp(a, a, alpha).values, a.values)


def test_lerp_rejects_mismatch_and_extrapolation():
    a = _vec([1.0, 2.0])
    with pytest.raises(ShapeMismatchError):
        lerp(a, _vec([1.0, 2.0, 3.0]), 0.5)
    with pytest.raises(ShapeMismatchError):
        lerp(a, _vec([1.0, 2.0], dtype=np.float32), 0.5)
    for alpha in (-0.1, 1.1):
        with pytest.raises(ValueError):
            lerp(a, _vec([1.0, 2.0]), alpha)


def test_alpha_grid_exact():
    for n in (2, 5, 100):
        g = alpha_grid(n)
        assert g[0] == 0.0 and g[-1] == 1.0
        expected = np.array([i / (n - 1) for i in range(n)])
        assert np.array_equal(g, expected)  # exact division, 0 ulp off
    with pytest.raises(ValueError):
        alpha_grid(1)


@pytest.fixture(scope="module")
def mlp_run_f64():
    spec = mlp_spec(hidden=(12, 6), input_shape=(10,), num_classes=3, precision="f64")
    tr = synthetic_blobs(3, 10, 80, 3.0, seed=21, split="train")
    te = synthetic_blobs(3, 10, 80, 3.0, seed=21, split="test")
    hp = Hyperparams(lr=0.1, momentum=0.9, batch_size=16, t_max=32)
    ckpts = {c.iteration: c for c in train(spec, hp, tr, seed=2)}
    return spec, te, ckpts


def test_path_endpoints_match_standalone_evaluate(mlp_run_f64):
    spec, te, ckpts = mlp_run_f64
    curve = evaluate_path(ckpts[0], ckpts[32], te, n_points=9)
    first = evaluate(ckpts[0].params, spec, te)
    last = evaluate(ckpts[32].params, spec, te)
    assert curve.losses[0] == first.loss and curve.errors[0] == first.error
    assert curve.losses[-1] == last.loss and curve.errors[-1] == last.error


def test_path_symmetry_bitwise_in_f64(mlp_run_f64):
    spec, te, ckpts = mlp_run_f64
    ab = evaluate_path(ckpts[0], ckpts[32], te, n_points=11)
    ba = evaluate_path(ckpts[32], ckpts[0], te, n_points=11)
    assert np.array_equal(ab.losses, ba.losses[::-1])
    assert np.array_equal(ab.errors, ba.errors[::-1])


def test_path_symmetry_f32_tolerance():
    spec = mlp_spec(hidden=(12, 6), input_shape=(10,), num_classes=3)
    tr = synthetic_blobs(3, 10, 80, 3.0, seed=22, split="train")
    te = synthetic_blobs(3, 10, 80, 3.0, seed=22, split="test")
    hp = Hyperparams(lr=0.1, momentum=0.9, batch_size=16, t_max=16)
    ckpts = {c.iteration: c for c in train(spec, hp, tr, seed=5)}
    ab = evaluate_path(ckpts[0], ckpts[16], te, n_points=11)
    ba = evaluate_path(ckpts[16], ckpts[0], te, n_points=11)
    assert np.abs(ab.losses - ba.losses[::-1]).max() <= 1e-5


def test_self_path_is_constant(mlp_run_f64):
    spec, te, ckpts = mlp_run_f64
    curve = evaluate_path(ckpts[32], ckpts[32], te, n_points=7)
    assert np.all(curve.losses == curve.losses[0])
    assert np.all(curve.errors == curve.errors[0])


def test_path_rejects_mismatched_endpoints(mlp_run_f64, tiny_resnet_spec):
    spec, te, ckpts = mlp_run_f64
    other = build_model(tiny_resnet_spec, 0)
    from linpath.trainer import Checkpoint
    alien = Checkpoint(iteration=0, seed=2, params=other, spec=tiny_resnet_spec)
    with pytest.raises(ValueError):
        evaluate_path(ckpts[0], alien, te)
    cross_seed = Checkpoint(iteration=32, seed=3, params=ckpts[32].params,
                            spec=ckpts[32].spec)
    with pytest.raises(ValueError, match="replicate"):
        evaluate_path(ckpts[0], cross_seed, te)


def test_convex_quadratic_surrogate_path_is_exactly_convex():
    # 2-parameter PSD quadratic: q(w) = 0.5 w'Aw + b'w + c
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    b = np.array([-1.0, 0.7])
    c = 3.0

    def eval_fn(theta):
        w = theta.values
        return EvalResult(loss=float(0.5 * w @ A @ w + b @ w + c), error=0.0, count=1)

    start = _vec([-2.0, 1.5])
    end = _vec([3.0, -0.5])
    alphas, results = evaluate_path_values(start, end, 100, eval_fn)
    losses = np.array([r.loss for r in results])
    second_diff = losses[2:] - 2 * losses[1:-1] + losses[:-2]
    assert np.all(second_diff >= -1e-12)
    curve = PathCurve(alphas=alphas, losses=losses, errors=np.zeros_like(losses),
                      t_from=0, t_to=1, seed=0, bn_mode="interpolate")
    hv = barrier_height(curve)
    assert hv.loss == 0.0 and hv.error == 0.0


@pytest.fixture(scope="module")
def bn_resnet_run():
    spec = resnet_mini_spec(input_shape=(6, 6, 3), num_classes=4)
    tr = synthetic_blobs(4, 108, 40, 5.0, seed=31, split="train")
    te = synthetic_blobs(4, 108, 40, 5.0, seed=31, split="test")
    hp = Hyperparams(lr=0.05, momentum=0.9, batch_size=16, t_max=8)
    ckpts = {c.iteration: c for c in train(spec, hp, tr, seed=1)}
    return spec, tr, te, ckpts


def test_bn_states_interpolate_with_the_rest(bn_resnet_run):
    spec, tr, te, ckpts = bn_resnet_run
    mid = lerp(ckpts[0].params, ckpts[8].params, 0.5)
    a = ckpts[0].params.view("stem.bn.running_mean")
    b = ckpts[8].params.view("stem.bn.running_mean")
    expected = np.float32(0.5) * a + np.float32(0.5) * b
    assert np.array_equal(mid.view("stem.bn.running_mean"), expected)


def test_negative_interpolated_variance_is_clamped(bn_resnet_run):
    spec, tr, te, ckpts = bn_resnet_run
    theta = ckpts[8].params.copy()
    theta.view("stage1.block1.bn1.running_var")[...] = -0.5  # as if file-corrupted
    result = evaluate(theta, spec, te)
    assert np.isfinite(result.loss)


def test_bn_recalibrate_identity_stem_recovers_data_moments():
    # stem conv set to a delta kernel: the stem BN input is the raw data
    spec = resnet_mini_spec(input_shape=(4, 4, 8), num_classes=3,
                            stage_widths=(8, 16, 32))
    theta = build_model(spec, 0)
    w = theta.view("stem.conv.weight")
    w[...] = 0.0
    for ch in range(8):
        w[1, 1, ch, ch] = 1.0
    rng = np.random.default_rng(0)
    x = (rng.standard_normal((64, 4, 4, 8)) * 2.0 + 1.0).astype(np.float32)
    y = rng.integers(0, 3, size=64)
    recal = bn_recalibrate(theta, spec, (x, y))
    mean = recal.view("stem.bn.running_mean")
    var = recal.view("stem.bn.running_var")
    assert np.allclose(mean, x.mean(axis=(0, 1, 2)), atol=1e-5)
    assert np.allclose(var, x.var(axis=(0, 1, 2)), atol=1e-5)
    # everything but running stats untouched
    for slot in theta.manifest:
        if slot.role not in ("bn-running-mean", "bn-running-var"):
            assert np.array_equal(recal.view(slot.name), theta.view(slot.name))


def test_bn_recalibrate_idempotent(bn_resnet_run):
    spec, tr, te, ckpts = bn_resnet_run
    theta = lerp(ckpts[0].params, ckpts[8].params, 0.5)
    once = bn_recalibrate(theta, spec, tr)
    twice = bn_recalibrate(once, spec, tr)
    assert np.array_equal(once.values, twice.values)


def test_bn_recalibrate_noop_warns_for_mlp(small_mlp_spec, blob_test_set):
    theta = build_model(small_mlp_spec, 0)
    with pytest.warns(UserWarning, match="no batch-norm"):
        out = bn_recalibrate(theta, small_mlp_spec, blob_test_set)
    assert np.array_equal(out.values, theta.values)


def test_recalibrated_path_mode_is_tagged(bn_resnet_run):
    spec, tr, te, ckpts = bn_resnet_run
    curve = evaluate_path(ckpts[0], ckpts[8], te, n_points=3,
                          bn_mode="recalibrate", calibration_data=tr)
    assert curve.bn_mode == "recalibrate"
    assert np.all(np.isfinite(curve.losses))
    # endpoints match standalone evaluation of recalibrated endpoints
    recal_end = bn_recalibrate(ckpts[8].params, spec, tr)
    from linpath.nn.engine import evaluate as ev
    assert curve.losses[-1] == ev(recal_end, spec, te).loss


def test_recalibration_matches_giant_batch_statistics(bn_resnet_run):
    # the staged pass equals normalizing each layer by whole-set moments
    spec, tr, te, ckpts = bn_resnet_run
    theta = ckpts[8].params
    recal = bn_recalibrate(theta, spec, tr)
    from linpath.nn.engine import engine_for
    engine = engine_for(spec)
    x = engine.prepare_input(tr.inputs)
    # stem check by direct computation
    from linpath.nn.ops import conv2d_forward
    pre, _ = conv2d_forward(x, theta.view("stem.conv.weight"), None, stride=1, pad=1)
    assert np.allclose(recal.view("stem.bn.running_mean"), pre.mean(axis=(0, 1, 2)),
                       atol=1e-5)
    assert np.allclose(recal.view("stem.bn.running_var"), pre.var(axis=(0, 1, 2)),
                       atol=1e-5)
