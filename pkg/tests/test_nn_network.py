import numpy as np
import pytest

from afhorizon.errors import NumericalError, ValidationError
from afhorizon.nn import NetConfig, forward, init_params, loss_and_grad
from afhorizon.nn.gradcheck import check_model_gradients

TINY = NetConfig(
    n_leads=4,
    input_len=32,
    stem_channels=5,
    block_channels=(5, 6),
    kernel_size=5,
    downsample=(2, 2),
    dropout=0.25,
)


def tiny_batch(rng, n=3, cfg=TINY, dtype=np.float64):
    x = rng.standard_normal((n, cfg.n_leads, cfg.input_len)).astype(dtype)
    y = rng.integers(0, cfg.n_classes, size=n)
    return x, y


def test_zero_parameters_give_uniform_probs():
    params = init_params(TINY, seed=0)
    for name in params.tensors:
        params.tensors[name][:] = 0.0
    x = np.random.default_rng(0).standard_normal((4, 4, 32)).astype(np.float32)
    probs = forward(params, x)
    assert np.allclose(probs, 1.0 / 3.0, atol=1e-7)


def test_probs_sum_to_one():
    params = init_params(TINY, seed=1)
    rng = np.random.default_rng(1)
    x, _ = tiny_batch(rng, n=8, dtype=np.float32)
    probs = forward(params, x)
    assert probs.min() >= 0.0
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-6


def test_eval_forward_is_deterministic():
    params = init_params(TINY, seed=2)
    x = np.random.default_rng(3).standard_normal((5, 4, 32)).astype(np.float32)
    assert np.array_equal(forward(params, x), forward(params, x))


def test_batch_partition_invariance():
    params = init_params(TINY, seed=4)
    # non-trivial running stats so eval-mode normalization actually matters
    for name, arr in params.tensors.items():
        if name.endswith("running_mean"):
            arr += 0.3
        if name.endswith("running_var"):
            arr *= 1.7
    x = np.random.default_rng(5).standard_normal((13, 4, 32)).astype(np.float32)
    full = forward(params, x)
    for bs in (1, 4, 5, 13):
        parts = [forward(params, x[i : i + bs]) for i in range(0, 13, bs)]
        assert np.abs(np.concatenate(parts) - full).max() < 1e-5


def test_composed_network_gradient_check():
    cfg = TINY
    params = init_params(cfg, seed=6, dtype=np.float64)
    assert params.n_parameters() <= 5000
    rng = np.random.default_rng(7)
    x, y = tiny_batch(rng, n=3)

    def loss():
        return loss_and_grad(
            params, x, y, rng=np.random.default_rng(42), update_running=False
        )[0]

    _, grads = loss_and_grad(
        params, x, y, rng=np.random.default_rng(42), update_running=False
    )
    errors = check_model_gradients(params, loss, grads, step=1e-5)
    worst = max(errors.values())
    assert worst < 1e-4, sorted(errors.items(), key=lambda kv: -kv[1])[:3]


def test_dropout_zero_config_needs_no_rng():
    cfg = NetConfig(
        n_leads=4, input_len=32, stem_channels=4, block_channels=(4,),
        kernel_size=3, downsample=(2,), dropout=0.0,
    )
    params = init_params(cfg, seed=0)
    x = np.random.default_rng(1).standard_normal((2, 4, 32)).astype(np.float32)
    loss, _ = loss_and_grad(params, x, np.array([0, 1]), rng=None)
    assert np.isfinite(loss)


def test_shape_mismatch_names_layer():
    params = init_params(TINY, seed=0)
    x = np.zeros((2, 3, 32), dtype=np.float32)
    with pytest.raises(ValidationError, match="stem.conv"):
        forward(params, x)


def test_nan_activation_names_layer():
    params = init_params(TINY, seed=0)
    params.tensors["block0.conv1.w"][:] = np.nan
    x = np.zeros((2, 4, 32), dtype=np.float32)
    with pytest.raises(NumericalError, match="block0.conv1"):
        forward(params, x)


def test_training_mode_requires_rng_for_dropout():
    params = init_params(TINY, seed=0)
    x = np.zeros((2, 4, 32), dtype=np.float32)
    with pytest.raises(ValidationError, match="rng"):
        loss_and_grad(params, x, np.array([0, 1]), rng=None)


def test_empty_batch_rejected():
    params = init_params(TINY, seed=0)
    x = np.zeros((0, 4, 32), dtype=np.float32)
    with pytest.raises(ValidationError, match="empty"):
        loss_and_grad(params, x, np.array([], dtype=int), rng=np.random.default_rng(0))


def test_running_stats_update_only_when_asked():
    params = init_params(TINY, seed=8)
    x = np.random.default_rng(9).standard_normal((4, 4, 32)).astype(np.float32) + 2.0
    before = params.tensors["stem.bn.running_mean"].copy()
    loss_and_grad(params, x, np.array([0, 1, 2, 0]),
                  rng=np.random.default_rng(0), update_running=False)
    assert np.array_equal(params.tensors["stem.bn.running_mean"], before)
    loss_and_grad(params, x, np.array([0, 1, 2, 0]),
                  rng=np.random.default_rng(0), update_running=True)
    assert not np.array_equal(params.tensors["stem.bn.running_mean"], before)


def test_five_block_configuration_constructible():
    cfg = NetConfig(
        block_channels=(64, 128, 196, 256, 320),
        downsample=(4, 4, 4, 4, 4),
        kernel_size=16,
        stem_channels=64,
    )
    assert cfg.n_residual_blocks == 5
    params = init_params(cfg, seed=0)
    assert params.n_parameters() > 1_000_000


def test_downsample_floor_guard():
    with pytest.raises(ValidationError, match="time steps"):
        NetConfig(n_leads=4, input_len=32, block_channels=(4, 4, 4),
                  downsample=(4, 4, 4), kernel_size=3)
