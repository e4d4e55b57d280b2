import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadfault.data import Dataset, Normalization
from quadfault.nn import layers as ly
from quadfault.nn.adam import Adam
from quadfault.nn.gradcheck import grad_check
from quadfault.nn.mmd import mmd2
from quadfault.nn.model import (
    Architecture,
    MemberModel,
    ModelFormatError,
    features,
    forward,
    loss,
    loss_and_grads,
)
from quadfault.nn.train import HyperParams, train_member

SMALL = Architecture(window=16, channels=(4, 8), kernel=5, feature_dim=16)


def random_batch(rng, m=12, arch=SMALL):
    xa = rng.normal(size=(m, arch.n_rows, arch.window))
    ya = rng.integers(1, 6, size=m)
    xd = rng.normal(size=(m, arch.n_rows, arch.window))
    xe = rng.normal(0.3, 1.2, size=(m, arch.n_rows, arch.window))
    return xa, ya, xd, xe


class TestForward:
    def test_logit_and_feature_shapes(self):
        mdl = MemberModel.initial(Architecture(), 0)
        logits, f = forward(mdl, np.zeros((9, 7, 16)))
        assert logits.shape == (9, 5) and f.shape == (9, 64)
        assert mdl.mu_healthy.shape == (64,)

    def test_shape_error_names_layer(self):
        mdl = MemberModel.initial(Architecture(), 0)
        with pytest.raises(ly.ShapeError, match=r"conv1.*\(m, 7, 16\)"):
            forward(mdl, np.zeros((3, 6, 16)))
        with pytest.raises(ly.ShapeError, match="difference"):
            forward(mdl.with_reference(np.zeros(10)), np.zeros((3, 7, 16)))

    def test_centering(self):
        rng = np.random.default_rng(1)
        mdl = MemberModel.initial(SMALL, 3)
        x = rng.normal(size=(40, 7, 16))
        ref = mdl.with_reference(features(mdl, x).mean(axis=0))
        _, f = forward(ref, x)
        assert np.abs((f - ref.mu_healthy).mean(axis=0)).max() < 1e-8

    def test_different_seeds_differ(self):
        x = np.random.default_rng(2).normal(size=(5, 7, 16))
        a, _ = forward(MemberModel.initial(Architecture(), 1), x)
        b, _ = forward(MemberModel.initial(Architecture(), 2), x)
        assert np.abs(a - b).max() > 0

    def test_inference_is_deterministic(self):
        mdl = MemberModel.initial(SMALL, 4)
        x = np.random.default_rng(3).normal(size=(6, 7, 16))
        assert forward(mdl, x)[0].tobytes() == forward(mdl, x)[0].tobytes()

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.floats(0.1, 50.0), st.integers(0, 2**16))
    def test_softmax_rows(self, m, scale, seed):
        z = np.random.default_rng(seed).normal(scale=scale, size=(m, 5))
        p = ly.softmax(z)
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0)
        assert np.all(p >= 0) and np.all(p <= 1)


class TestLoss:
    def test_zero_lambda_is_pure_classification(self):
        batch = random_batch(np.random.default_rng(0))
        lb, _ = loss_and_grads(MemberModel.initial(SMALL, 0).params, *batch, lam=0.0)
        assert lb.total == lb.classification

    def test_additivity(self):
        batch = random_batch(np.random.default_rng(1))
        lb, _ = loss_and_grads(MemberModel.initial(SMALL, 0).params, *batch, lam=0.05)
        assert lb.total == pytest.approx(lb.classification + 0.05 * lb.adaptation, rel=1e-15, abs=0)

    def test_public_loss_ignores_b(self):
        xa, ya, xd, xe = random_batch(np.random.default_rng(2))
        mdl = MemberModel.initial(SMALL, 0)
        lb = loss(mdl, (xa, ya), xe, xd, xe, 0.05)
        assert lb == loss(mdl, (xa, ya), None, xd, xe, 0.05)

    def test_mmd_gaussian_clouds(self):
        rng = np.random.default_rng(5)
        same = mmd2(rng.normal(size=(300, 4)), rng.normal(size=(300, 4)), with_grad=False)[0]
        shifted = mmd2(rng.normal(size=(300, 4)), rng.normal(2.0, 1.0, size=(300, 4)), with_grad=False)[0]
        assert same < 0.01 and shifted > 0.2 and shifted > 20 * same

    def test_mmd_matches_direct_formula(self):
        # independent oracle: explicit double loop over kernel evaluations
        rng = np.random.default_rng(6)
        X, Y = rng.normal(size=(5, 3)), rng.normal(1.0, 1.0, size=(4, 3))
        Z = np.vstack([X, Y])
        d2 = [np.sum((Z[i] - Z[j]) ** 2) for i in range(9) for j in range(i + 1, 9)]
        h = np.median(d2)

        def k(a, b):
            return np.exp(-np.sum((a - b) ** 2) / h)

        kxx = np.mean([k(a, b) for a in X for b in X])
        kyy = np.mean([k(a, b) for a in Y for b in Y])
        kxy = np.mean([k(a, b) for a in X for b in Y])
        assert mmd2(X, Y)[0] == pytest.approx(kxx + kyy - 2 * kxy, abs=1e-12)


class TestGradients:
    def test_small_model_budget(self):
        assert SMALL.n_params() <= 5000

    def test_gradient_check(self):
        mdl = MemberModel.initial(SMALL, 7)
        err = grad_check(mdl, random_batch(np.random.default_rng(7), m=10), n_checks=150)
        assert err < 1e-5

    def test_corrupted_gradient_is_caught(self):
        def bad(params, *args):
            lb, g = loss_and_grads(params, *args)
            g["fc.W"] = g["fc.W"] * 1.5
            g["conv1.W"] = g["conv1.W"] + 1e-3
            return lb, g

        mdl = MemberModel.initial(SMALL, 7)
        err = grad_check(mdl, random_batch(np.random.default_rng(7), m=10), n_checks=150, grad_fn=bad)
        assert err > 1e-2

    def test_adam_first_step_moves_by_lr(self):
        p = {"w": np.array([1.0, -2.0])}
        opt = Adam(p, lr=0.1)
        opt.step({"w": np.array([3.0, -0.5])})
        assert np.allclose(p["w"], [0.9, -1.9], atol=1e-7)


def toy_datasets(seed=0, n=600):
    """Two classes separable along a single input channel."""
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, 1, 2)
    X = rng.normal(size=(n, 7, 16))
    X[:, 0, :] += np.where(y == 1, -1.5, 1.5)[:, None]
    origins = [(f"toy{i}", 0.0) for i in range(n)]
    norm = Normalization.fit(X)
    A = Dataset(X, y, origins, "A", norm)
    healthy = y == 1
    D = A.subset(healthy, "D")
    B = Dataset(X[healthy][:150], y[healthy][:150], origins[:150], "B", norm)
    E = B.subset(np.ones(len(B), bool), "E")
    return A, B, D, E, X, y


class TestTraining:
    def test_toy_set_is_separable(self):
        # oracle: plain logistic regression on the channel means
        *_, X, y = toy_datasets()
        feat = X[:, 0, :].mean(axis=1)
        t = (y == 2).astype(float)
        w, b = 0.0, 0.0
        for _ in range(500):
            p = 1 / (1 + np.exp(-(w * feat + b)))
            w -= 0.5 * np.mean((p - t) * feat)
            b -= 0.5 * np.mean(p - t)
        assert np.mean((w * feat + b > 0) == (t == 1)) > 0.99

    def test_one_epoch_learns_toy_set(self):
        A, B, D, E, *_ = toy_datasets(n=2000)
        hp = HyperParams(lr=1e-2, batch_size=32, epochs=1, channels=(4, 8), feature_dim=16)
        mdl = train_member(A, B, D, E, hp, seed=0)
        logits, _ = forward(mdl.with_reference(mdl.mu_source), A.Z)
        assert np.mean(logits.argmax(axis=1) + 1 == A.y) > 0.9
        assert len(mdl.history) == 1 and np.isfinite(mdl.history[0]["loss"])

    def test_same_seed_is_bit_identical(self):
        A, B, D, E, *_ = toy_datasets(n=200)
        hp = HyperParams(batch_size=32, epochs=2, channels=(4, 8), feature_dim=16)
        a = train_member(A, B, D, E, hp, seed=5)
        b = train_member(A, B, D, E, hp, seed=5)
        c = train_member(A, B, D, E, hp, seed=6)
        assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
        assert all(a.params[k] is not c.params[k] for k in a.params)
        assert not np.array_equal(a.params["fc.W"], c.params["fc.W"])

    def test_invalid_hyperparameters(self):
        A, B, D, E, *_ = toy_datasets(n=100)
        with pytest.raises(ValueError, match="lr"):
            train_member(A, B, D, E, HyperParams(lr=0.0), seed=0)

    def test_defaults(self):
        hp = HyperParams()
        assert (hp.lr, hp.batch_size, hp.epochs, hp.dropout, hp.lam) == (3e-4, 128, 10, 0.1, 0.05)


class TestModelFile:
    def test_round_trip_exact(self, tmp_path):
        mdl = MemberModel.initial(SMALL, 11)
        mdl.mu_healthy = np.random.default_rng(0).normal(size=16)
        back = MemberModel.load(mdl.save(tmp_path / "m.json"))
        assert all(back.params[k].tobytes() == mdl.params[k].tobytes() for k in mdl.params)
        assert back.mu_healthy.tobytes() == mdl.mu_healthy.tobytes() and back.arch == mdl.arch

    def test_wrong_format(self):
        d = MemberModel.initial(SMALL, 0).to_dict()
        d["format"] = "quadfault-member/0"
        with pytest.raises(ModelFormatError):
            MemberModel.from_dict(d)
