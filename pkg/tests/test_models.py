"""Architecture and training-loop tests.

Toy configurations keep the finite-difference checks fast; the whole-model
gradients for every kind (dnn, cnn incl. avg pooling, fusionnet) are
checked against central differences at h = 1e-5.
"""

import numpy as np
import pytest

from utifusion import nn
from utifusion.models import (
    ArrayDataset,
    ModelConfig,
    SGDConfig,
    build_cnn,
    build_dnn,
    build_fusionnet,
    build_model,
    evaluate_loss_acc,
    train,
)
from utifusion.tensor import softmax

from gradcheck import check_model_gradients


def toy_config(kind, **overrides):
    base = dict(
        kind=kind,
        input_image_shape=(1, 8, 8),
        texture_dim=16,
        num_classes=4,
        dnn_hidden=(12, 8),
        cnn_filters=(3, 4),
        cnn_hidden=8,
        fusion_texture_hidden=(10, 6),
        fusion_head_hidden=6,
        seed=7,
    )
    base.update(overrides)
    return ModelConfig(**base)


def toy_batch(model, n=5, seed=0):
    rng = np.random.default_rng(seed)
    c, h, w = model.config.input_image_shape
    images = rng.normal(size=(n, c, h, w))
    textures = rng.uniform(0, 1, size=(n, model.config.texture_dim))
    textures /= textures.sum(axis=1, keepdims=True)
    labels = rng.integers(0, model.config.num_classes, size=n)
    if model.kind != "fusionnet":
        textures = None
    return images, textures, labels


class TestBuildDnn:
    def test_default_parameter_count(self):
        # flatten(1,64,64) -> dense(4096,512) -> dense(512,256) -> dense(256,4):
        # 4096*512 + 512 + 512*256 + 256 + 256*4 + 4
        model = build_dnn(ModelConfig(kind="dnn"))
        expected = 64 * 64 * 512 + 512 + 512 * 256 + 256 + 256 * 4 + 4
        assert expected == 2_230_020
        assert model.parameter_count() == expected

    def test_output_shape(self):
        model = build_dnn(toy_config("dnn"))
        images, textures, _ = toy_batch(model, n=6)
        probs = model.forward(images, textures)
        assert probs.shape == (6, 4)

    def test_same_seed_bitwise_identical(self):
        a = build_dnn(toy_config("dnn"))
        b = build_dnn(toy_config("dnn"))
        for (pa, arr_a), (pb, arr_b) in zip(a.parameter_items(), b.parameter_items()):
            assert pa == pb
            np.testing.assert_array_equal(arr_a, arr_b)

    def test_different_seed_differs(self):
        a = build_dnn(toy_config("dnn", seed=1))
        b = build_dnn(toy_config("dnn", seed=2))
        assert any(
            not np.array_equal(x[1], y[1])
            for x, y in zip(a.parameter_items(), b.parameter_items())
        )


class TestBuildCnn:
    def test_flatten_size_64(self):
        model = build_cnn(ModelConfig(kind="cnn"))
        flatten = next(l for l in model.image_layers if l.kind == "flatten")
        assert flatten.input_shape == (32, 16, 16)
        assert 32 * 16 * 16 == 8192

    def test_zero_input_uniform_probs(self):
        model = build_cnn(toy_config("cnn"))
        probs = model.forward(np.zeros((3, 1, 8, 8)))
        np.testing.assert_allclose(probs, 0.25, atol=1e-12)

    def test_output_shape(self):
        model = build_cnn(toy_config("cnn"))
        probs = model.forward(np.random.default_rng(0).normal(size=(5, 1, 8, 8)))
        assert probs.shape == (5, 4)

    def test_input_too_small_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            build_cnn(toy_config("cnn", input_image_shape=(1, 3, 3)))


class TestBuildFusionnet:
    def test_concat_width(self):
        model = build_fusionnet(ModelConfig(kind="fusionnet"))
        assert model.concat.left_width == 128
        assert model.concat.right_width == 64
        head_in = model.head_layers[0].in_dim
        assert head_in == 192

    def test_texture_branch_cut(self):
        model = build_fusionnet(toy_config("fusionnet"))
        last_tex_dense = [l for l in model.texture_layers if l.kind == "dense"][-1]
        last_tex_dense.weights[:] = 0.0
        last_tex_dense.bias[:] = 0.0
        rng = np.random.default_rng(1)
        images = rng.normal(size=(4, 1, 8, 8))
        t1 = rng.uniform(0, 1, size=(4, 16))
        t2 = rng.uniform(0, 1, size=(4, 16))
        np.testing.assert_array_equal(model.forward(images, t1), model.forward(images, t2))

    def test_rows_sum_to_one(self):
        model = build_fusionnet(toy_config("fusionnet"))
        images, textures, _ = toy_batch(model, n=7)
        probs = model.forward(images, textures)
        assert probs.shape == (7, 4)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_missing_texture_dim_rejected(self):
        with pytest.raises(ValueError, match="texture_dim"):
            ModelConfig(kind="fusionnet", texture_dim=0)


class TestForwardContract:
    def test_fusionnet_without_textures_rejected(self):
        model = build_fusionnet(toy_config("fusionnet"))
        with pytest.raises(ValueError, match="texture"):
            model.forward(np.zeros((2, 1, 8, 8)))

    def test_cnn_with_textures_rejected(self):
        model = build_cnn(toy_config("cnn"))
        with pytest.raises(ValueError, match="texture"):
            model.forward(np.zeros((2, 1, 8, 8)), np.zeros((2, 16)))

    def test_eval_forward_deterministic(self):
        model = build_fusionnet(toy_config("fusionnet"))
        images, textures, _ = toy_batch(model)
        np.testing.assert_array_equal(
            model.forward(images, textures), model.forward(images, textures)
        )

    def test_matches_manual_layer_composition(self):
        # 2-layer toy dnn, recomputed from the extracted parameters
        cfg = toy_config("dnn", dnn_hidden=(5,))
        model = build_dnn(cfg)
        images, _, _ = toy_batch(model, n=3)
        w1 = model.image_layers[1].weights
        b1 = model.image_layers[1].bias
        w2 = model.image_layers[3].weights
        b2 = model.image_layers[3].bias
        flat = images.reshape(3, -1)
        hidden = np.maximum(flat @ w1 + b1, 0.0)
        expected = softmax(hidden @ w2 + b2)
        np.testing.assert_allclose(model.forward(images), expected, atol=1e-12)


class TestGradients:
    def test_zero_input_linear_model(self):
        cfg = toy_config("dnn", dnn_hidden=())
        model = build_dnn(cfg)
        images = np.zeros((4, 1, 8, 8))
        labels = np.array([0, 1, 2, 3])
        _, grads = nn.backward(model, (images, None, labels))
        np.testing.assert_array_equal(grads["image.1.weights"], 0.0)
        assert np.abs(grads["image.1.bias"]).max() > 0

    @pytest.mark.parametrize(
        "kind,pooling", [("dnn", "max"), ("cnn", "max"), ("cnn", "avg"), ("fusionnet", "max")]
    )
    def test_finite_difference_all_kinds(self, kind, pooling):
        model = build_model(toy_config(kind, pooling=pooling))
        batch = toy_batch(model, n=4, seed=3)
        worst = check_model_gradients(model, batch, n_samples=120, rng_seed=11)
        assert worst < 1e-4, f"{kind}/{pooling}: max rel err {worst:.2e}"

    def test_duplicated_batch_same_mean_gradients(self):
        model = build_dnn(toy_config("dnn"))
        images, _, labels = toy_batch(model, n=3, seed=5)
        loss1, grads1 = nn.backward(model, (images, None, labels))
        dup = (np.concatenate([images, images]), None, np.concatenate([labels, labels]))
        loss2, grads2 = nn.backward(model, dup)
        assert abs(loss1 - loss2) < 1e-9
        for path in grads1:
            np.testing.assert_allclose(grads1[path], grads2[path], atol=1e-9)

    def test_single_step_decreases_loss(self):
        # line-search property: some small enough lr strictly decreases the
        # 1-sample loss after one step
        model = build_cnn(toy_config("cnn"))
        images, _, labels = toy_batch(model, n=1, seed=9)
        batch = (images, None, labels)
        rng_seed = 21

        def loss_now():
            probs = model.forward(images, None, train=True, rng=np.random.default_rng(rng_seed))
            return nn.cross_entropy(probs, labels)

        before = loss_now()
        _, grads = nn.backward(model, batch, rng=np.random.default_rng(rng_seed))
        lr = 0.1
        for _ in range(12):
            trial = {p: arr.copy() for p, arr in model.parameter_items()}
            nn.sgd_step(model, grads, SGDConfig(learning_rate=lr))
            after = loss_now()
            if after < before:
                break
            for (path, arr), (_, saved) in zip(model.parameter_items(), trial.items()):
                arr[:] = trial[path]
            lr /= 2
        assert after < before


def tiny_dataset(model, n=24, seed=4):
    images, textures, labels = toy_batch(model, n=n, seed=seed)
    return ArrayDataset(images=images, textures=textures if model.kind == "fusionnet" else None, labels=labels)


class TestTrain:
    def test_zero_epochs_no_change_empty_history(self):
        model = build_dnn(toy_config("dnn"))
        before = {p: arr.copy() for p, arr in model.parameter_items()}
        data = tiny_dataset(model)
        model, history = train(model, data, SGDConfig(epochs=0))
        assert len(history) == 0
        for path, arr in model.parameter_items():
            np.testing.assert_array_equal(arr, before[path])

    def test_identical_seeds_identical_history(self):
        cfg = SGDConfig(learning_rate=0.01, batch_size=8, epochs=3, seed=2)
        runs = []
        for _ in range(2):
            model = build_fusionnet(toy_config("fusionnet"))
            data = tiny_dataset(model)
            model, history = train(model, data, cfg)
            runs.append((history.to_csv(), {p: a.copy() for p, a in model.parameter_items()}))
        assert runs[0][0] == runs[1][0]
        for path in runs[0][1]:
            np.testing.assert_array_equal(runs[0][1][path], runs[1][1][path])

    def test_history_has_test_curves_with_eval_data(self):
        model = build_dnn(toy_config("dnn"))
        data = tiny_dataset(model)
        model, history = train(model, data, SGDConfig(epochs=2, batch_size=8), eval_data=data)
        assert all(r.test_loss is not None and r.test_acc is not None for r in history.rows)
        csv = history.to_csv()
        assert csv.splitlines()[0] == "epoch,train_loss,train_acc,test_loss,test_acc"

    def test_loss_nonincreasing_small_lr(self):
        # smooth descent on a fixed tiny set (dnn has no dropout noise)
        model = build_dnn(toy_config("dnn"))
        data = tiny_dataset(model, n=16)
        model, history = train(model, data, SGDConfig(learning_rate=0.005, batch_size=16, epochs=10))
        losses = [r.train_loss for r in history.rows]
        for prev, cur in zip(losses, losses[1:]):
            assert cur <= prev + 1e-3

    def test_empty_dataset_rejected(self):
        model = build_dnn(toy_config("dnn"))
        data = tiny_dataset(model, n=2)
        with pytest.raises(ValueError, match="empty"):
            train(model, data.subset([]), SGDConfig())

    def test_evaluate_loss_acc_matches_forward(self):
        model = build_dnn(toy_config("dnn"))
        data = tiny_dataset(model, n=10)
        loss, acc = evaluate_loss_acc(model, data)
        probs = model.forward(data.images)
        assert abs(loss - nn.cross_entropy(probs, data.labels)) < 1e-12
        assert acc == (probs.argmax(axis=1) == data.labels).mean()
