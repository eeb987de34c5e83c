import numpy as np
import pytest

from trajclust.autodiff import ParamSet
from trajclust.losses import LossWeights
from trajclust.network import ModelConfig, TrajectoryModel
from trajclust.trainer import (Adam, Cohort, DivergenceError, History, TrainConfig,
                               clone_model, finetune_cluster, moving_average, pretrain,
                               repeated_runs, split_indices)


def _toy(rng, n=240):
    groups = rng.integers(0, 3, n)
    centers = 6.0 * np.eye(3, 6)
    x = centers[groups] + 0.5 * rng.standard_normal((n, 6))
    times = rng.exponential(np.array([1.0, 10.0, 100.0])[groups])
    events = np.ones(n, dtype=int)
    return Cohort(x, times=times, events=events), groups


def _model(seed=0):
    return TrajectoryModel(ModelConfig(input_width=6, embed_width=8, latent_width=2,
                                       n_clusters=3, encoder_kind="feedforward"), seed=seed)


def test_adam_first_step_moves_by_learning_rate():
    p = ParamSet()
    p.add("w", np.array([1.0, -2.0]), decay=True)
    p["w"].grad = np.array([0.5, -3.0])
    Adam(p, lr=0.1).step()
    np.testing.assert_allclose(p["w"].value, [0.9, -1.9], atol=1e-6)


def test_adam_decoupled_weight_decay_only_on_flagged():
    p = ParamSet()
    p.add("w", np.array([2.0]), decay=True)
    p.add("b", np.array([2.0]))
    opt = Adam(p, lr=0.1, weight_decay=0.5)
    opt.step()  # no gradients: only decay acts
    assert p["w"].value[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)
    assert p["b"].value[0] == 2.0


def test_adam_minimizes_a_quadratic():
    p = ParamSet()
    p.add("w", np.array([5.0, -3.0]))
    opt = Adam(p, lr=0.1)
    for _ in range(500):
        p["w"].grad = 2 * p["w"].value
        opt.step()
    np.testing.assert_allclose(p["w"].value, 0.0, atol=1e-2)


def test_cohort_shapes_and_subset(rng):
    c = Cohort(rng.standard_normal((5, 3)), times=np.arange(1.0, 6.0), events=np.ones(5))
    assert c.x.shape == (5, 1, 3) and c.mask.shape == (5, 1, 3)
    sub = c.subset([0, 4])
    assert len(sub) == 2 and list(sub.times) == [1.0, 5.0]
    with pytest.raises(ValueError):
        Cohort(np.zeros((0, 3)))


def test_pretrain_reduces_reconstruction_loss(rng):
    cohort, _ = _toy(rng)
    cfg = TrainConfig(epochs=30, batch_size=64, learning_rate=5e-3,
                      weights=LossWeights(w_r=1.0))
    hist = pretrain(_model(), Cohort(cohort.x), cfg)
    loss = hist.column("L_r")
    assert loss[-1] < 0.5 * loss[0]


def test_finetune_finds_toy_clusters_and_logs_history(rng, tmp_path):
    cohort, groups = _toy(rng)
    cfg = TrainConfig(epochs=10, batch_size=64, learning_rate=3e-3, seed=1,
                      weights=LossWeights(w_r=0.5, w_y=1.0))
    res = finetune_cluster(_model(seed=2), cohort, cfg, warmup_epochs=20)
    from trajclust.metrics import adjusted_rand_index
    assert adjusted_rand_index(res.labels, groups) > 0.9
    np.testing.assert_allclose(res.q.sum(1), 1.0)
    assert len(res.history.rows) == 10
    assert {"L_r", "L_y", "L_c", "total", "frac_confident"} <= set(res.history.rows[0])
    res.history.to_csv(tmp_path / "loss.csv")
    assert (tmp_path / "loss.csv").read_text().startswith("epoch,")


def test_finetune_is_deterministic(rng):
    cohort, _ = _toy(rng, n=120)
    cfg = TrainConfig(epochs=3, batch_size=32, weights=LossWeights(w_r=0.5, w_y=1.0))
    a = finetune_cluster(_model(), cohort, cfg, warmup_epochs=2)
    b = finetune_cluster(_model(), cohort, cfg, warmup_epochs=2)
    np.testing.assert_array_equal(a.q, b.q)


def test_outcome_loss_needs_outcomes(rng):
    cohort, _ = _toy(rng, n=30)
    cfg = TrainConfig(epochs=1, weights=LossWeights(w_r=0.0, w_y=1.0))
    with pytest.raises(ValueError):
        finetune_cluster(_model(), Cohort(cohort.x), cfg)


def test_divergence_is_reported(rng):
    cohort, _ = _toy(rng, n=30)
    model = _model()
    model.params.set_value("enc1_W", np.full(model.params["enc1_W"].shape, np.inf))
    cfg = TrainConfig(epochs=1, weights=LossWeights(w_r=1.0))
    with pytest.raises(DivergenceError):
        pretrain(model, Cohort(cohort.x), cfg)


def test_pretrain_needs_reconstruction_or_kl():
    with pytest.raises(ValueError):
        pretrain(_model(), Cohort(np.zeros((4, 6))),
                 TrainConfig(weights=LossWeights(w_r=0, w_kl=0, w_y=1.0)))


def test_clone_model_resets_centroids_for_new_k():
    m = _model()
    m.params.set_value("centroids", np.ones((3, 2)))
    c = clone_model(m, n_clusters=5)
    assert c.params["centroids"].shape == (5, 2)
    np.testing.assert_array_equal(c.params["enc1_W"].value, m.params["enc1_W"].value)
    assert clone_model(m).params["centroids"].value.sum() == 6.0


def test_split_indices_partition(rng):
    train, test = split_indices(10, 0.8, rng)
    assert len(train) == 8 and len(test) == 2
    assert sorted(np.r_[train, test]) == list(range(10))
    full, same = split_indices(5, 1.0, rng)
    np.testing.assert_array_equal(full, same)


def test_repeated_runs_seeds_and_summary():
    seen = []

    def run(train, test, seed):
        seen.append(seed)
        return {"score": float(len(train)), "seed_mod": float(seed % 7)}

    a = repeated_runs(50, run, n_repeats=3, split_fraction=0.6, seed=9)
    b = repeated_runs(50, run, n_repeats=3, split_fraction=0.6, seed=9)
    assert a.runs == b.runs
    assert a.mean("score") == 30.0 and a.std("score") == 0.0
    assert len(set(seen[:3])) == 3
    assert "score" in a.table() and '"summary"' in a.to_json()


def test_moving_average():
    np.testing.assert_allclose(moving_average(np.arange(12.0), 10), [4.5, 5.5, 6.5])
    np.testing.assert_allclose(moving_average([1.0, 3.0], 10), [2.0])


def test_train_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        TrainConfig(split_fraction=0.0)
    cfg = TrainConfig(epochs=3, weights=LossWeights(w_r=0.1))
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_history_column():
    h = History([{"epoch": 0, "x": 1.0}, {"epoch": 1, "x": 2.0}])
    np.testing.assert_array_equal(h.column("x"), [1.0, 2.0])
