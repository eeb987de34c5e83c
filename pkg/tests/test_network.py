import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from trajclust import losses
from trajclust.autodiff import grad_check
from trajclust.losses import LossWeights
from trajclust.network import (DegenerateClusterError, ModelConfig, TrajectoryModel,
                               hard_labels, init_centroids, soft_assign,
                               target_distribution)

GRAD_TOL = 1e-4


def _model(kind, seed=0, **kw):
    cfg = dict(input_width=4, n_windows=3, embed_width=5, latent_width=2, n_clusters=3,
               encoder_kind=kind, binary_columns=(0, 1), dropout_p=0.0)
    cfg.update(kw)
    return TrajectoryModel(ModelConfig(**cfg), seed=seed)


def _batch(rng, n=5, t=3, f=4):
    x = rng.standard_normal((n, t, f))
    x[:, :, :2] = rng.integers(0, 2, (n, t, 2))
    return x


def composite(model, x, mask, times, events, target, noise_seed, weights):
    emb = model.encode(x, training=True, rng=np.random.default_rng(noise_seed))
    comps = {
        "L_r": losses.recon_loss(x, model.decode(emb.z, x), mask, weights.w_b,
                                 model.config.binary_mask),
        "L_KL": losses.kl_loss(emb.mu, emb.logvar),
        "L_y": losses.cox_loss(model.predict_risk(emb.z), times, events),
        "L_c": losses.cluster_loss(target, model.assign(emb.z)),
    }
    return losses.total_loss(comps, weights)


CASES = [("feedforward", s) for s in range(20)] + [("recurrent", s) for s in range(4)]


@pytest.mark.parametrize("kind,seed", CASES)
def test_composite_loss_gradient(kind, seed):
    rng = np.random.default_rng(seed)
    model = _model(kind, seed=seed)
    # zero biases put ReLU preactivations exactly on the kink; jitter them off it
    for name in model.params:
        v = model.params[name].value
        model.params.set_value(name, v + 0.1 * rng.standard_normal(v.shape))
    x = _batch(rng)
    mask = rng.random(x.shape) < 0.8
    times = rng.exponential(5, 5) + 0.1
    events = np.r_[1, rng.integers(0, 2, 4)]
    target = target_distribution(model.soft_labels(x))
    weights = LossWeights(w_r=0.3, w_y=1.0, w_c=0.25, w_kl=0.1, w_b=1.5)
    err = grad_check(lambda p: composite(model, x, mask, times, events, target, seed,
                                         weights), model.params)
    assert err < GRAD_TOL


@pytest.mark.parametrize("kind", ["feedforward", "recurrent"])
def test_output_shapes_and_binary_range(kind, rng):
    model = _model(kind)
    x = _batch(rng)
    emb = model.encode(x)
    assert emb.mu.shape == (5, 2)
    np.testing.assert_array_equal(emb.z.value, emb.mu.value)
    x_hat = model.decode(emb.z, x).value
    assert x_hat.shape == x.shape
    assert np.all((x_hat[:, :, :2] > 0) & (x_hat[:, :, :2] < 1))
    assert model.predict_risk(emb.z).shape == (5,)
    np.testing.assert_allclose(model.assign(emb.z).value.sum(1), 1.0)


def test_recurrent_decoder_is_teacher_forced(rng):
    model = _model("recurrent")
    x = _batch(rng)
    z = model.encode(x).z
    out = model.decode(z, x).value
    x2 = x.copy()
    x2[:, 2] += 5.0  # only the teacher for window 1 changes
    out2 = model.decode(z, x2).value
    np.testing.assert_allclose(out[:, 2], out2[:, 2])
    assert not np.allclose(out[:, 1], out2[:, 1])


def test_recurrent_encoder_accepts_any_length(rng):
    model = _model("recurrent")
    assert model.embed(rng.standard_normal((2, 7, 4))).shape == (2, 2)


def test_training_encode_needs_rng(rng):
    with pytest.raises(ValueError):
        _model("feedforward").encode(_batch(rng), training=True)


def test_input_width_checked(rng):
    with pytest.raises(ValueError):
        _model("feedforward").encode(rng.standard_normal((2, 3, 5)))


@pytest.mark.parametrize("bad", [dict(latent_width=12), dict(n_clusters=1),
                                 dict(encoder_kind="cnn"), dict(dropout_p=1.0),
                                 dict(binary_columns=(9,))])
def test_config_validation(bad):
    cfg = dict(input_width=4, n_windows=3, embed_width=5, latent_width=2)
    cfg.update(bad)
    with pytest.raises(ValueError):
        ModelConfig(**cfg)


def test_save_load_roundtrip(tmp_path, rng):
    model = _model("recurrent")
    model.save(tmp_path / "ck")
    again = TrajectoryModel.load(tmp_path / "ck")
    assert again.config == model.config
    x = _batch(rng)
    np.testing.assert_array_equal(again.embed(x), model.embed(x))


def test_same_seed_same_init():
    a, b = _model("feedforward", seed=3), _model("feedforward", seed=3)
    for name in a.params:
        np.testing.assert_array_equal(a.params[name].value, b.params[name].value)


# ------------------------------------------------------------- DEC layer

def test_soft_assign_student_t_half_power():
    z = np.array([[0.0, 0.0]])
    c = np.array([[0.0, 0.0], [3.0, 4.0]])
    kern = np.array([1.0, 1.0 / np.sqrt(26.0)])
    np.testing.assert_allclose(soft_assign(z, c).value[0], kern / kern.sum())


def test_target_distribution_sharpens_and_normalizes():
    q = np.array([[0.6, 0.4], [0.5, 0.5], [0.2, 0.8]])
    p = target_distribution(q)
    f = q.sum(0)
    w = q ** 2 / f
    np.testing.assert_allclose(p, w / w.sum(1, keepdims=True))
    assert p[0, 0] > q[0, 0] and p[2, 1] > q[2, 1]


@given(arrays(np.float64, (6, 3), elements=st.floats(0.01, 1.0)))
def test_target_distribution_rows_are_distributions(raw):
    q = raw / raw.sum(1, keepdims=True)
    p = target_distribution(q)
    np.testing.assert_allclose(p.sum(1), 1.0)
    assert np.all(p >= 0)
    np.testing.assert_array_equal(hard_labels(p), hard_labels(q * q / q.sum(0)))


def test_target_distribution_degenerate_cluster():
    with pytest.raises(DegenerateClusterError) as info:
        target_distribution(np.array([[1.0, 0.0], [1.0, 0.0]]))
    assert info.value.cluster == 1


def test_init_centroids_recovers_separated_groups(rng):
    centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]])
    emb = np.repeat(centers, 30, axis=0) + rng.standard_normal((90, 2))
    got = init_centroids(emb, 3, rng)
    nearest = np.linalg.norm(got[:, None] - centers[None], axis=2).argmin(1)
    assert sorted(nearest) == [0, 1, 2]
    np.testing.assert_allclose(got, centers[nearest], atol=0.6)
    with pytest.raises(ValueError):
        init_centroids(emb[:2], 3, rng)
