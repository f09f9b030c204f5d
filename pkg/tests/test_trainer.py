import math

import numpy as np
import pytest

from oracles import ref_infonce
from retrievalkit.errors import DataError
from retrievalkit.mining import Negative, TrainingInstance
from retrievalkit.trainer import (ToyEncoder, TrainConfig, batch_loss_and_grad, build_vocab,
                                  infonce_loss, train)


@pytest.fixture
def encoder():
    vocab = {t: i for i, t in enumerate(["alpha", "beta", "gamma", "delta"])}
    return ToyEncoder.initialize(vocab, dim=8, seed=1)


class TestEncode:
    def test_single_token(self, encoder):
        row = encoder.table[encoder.vocab["beta"]]
        np.testing.assert_allclose(encoder.encode("Beta"), row / np.linalg.norm(row), atol=1e-15)

    def test_repetition_invariant(self, encoder):
        np.testing.assert_allclose(encoder.encode("gamma " * 5), encoder.encode("gamma"), atol=1e-15)

    def test_oov(self, encoder):
        assert not encoder.encode("zzz qqq").any()
        assert not encoder.encode("").any()

    def test_oov_tokens_skipped(self, encoder):
        np.testing.assert_allclose(encoder.encode("alpha zzz"), encoder.encode("alpha"), atol=1e-15)

    def test_unit_norm(self, encoder):
        assert np.linalg.norm(encoder.encode("alpha beta beta delta")) == pytest.approx(1.0, abs=1e-12)

    def test_save_load(self, encoder, tmp_path):
        encoder.save(tmp_path / "enc.bin")
        back = ToyEncoder.load(tmp_path / "enc.bin")
        assert back.vocab == encoder.vocab
        np.testing.assert_array_equal(back.table, encoder.table)


class TestLoss:
    def test_single_candidate(self):
        assert infonce_loss([1.0, 0.0], [0.3, 0.4], [], 0.05) == 0.0

    @pytest.mark.parametrize("k", [2, 5, 17])
    def test_symmetric(self, k):
        q = np.array([0.6, 0.8])
        assert infonce_loss(q, q, [q] * (k - 1), 0.1) == pytest.approx(math.log(k), abs=1e-14)

    def test_matches_high_precision(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q, p = rng.normal(size=8), rng.normal(size=8)
            negs = rng.normal(size=(5, 8))
            tau = float(rng.uniform(0.05, 2.0))
            assert infonce_loss(q, p, negs, tau) == pytest.approx(ref_infonce(q, p, negs, tau), abs=1e-10)

    def test_large_logits_stable(self):
        q = np.array([1.0, 0.0])
        assert math.isfinite(infonce_loss(q, [-1.0, 0.0], [q], 1e-4))

    def test_temperature_positive(self):
        with pytest.raises(ValueError):
            infonce_loss([1.0], [1.0], [], 0.0)

    def test_decreases_with_positive_similarity(self):
        rng = np.random.default_rng(1)
        q = rng.normal(size=6)
        negs = rng.normal(size=(4, 6))
        p = rng.normal(size=6)
        losses = [infonce_loss(q, p + t * q, negs, 0.5) for t in np.linspace(0, 3, 10)]
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert min(losses) >= 0


def inst(qid, query, pos, pos_text, negs=()):
    return TrainingInstance(qid, query, pos, pos_text, tuple(Negative(d, t, 0.0) for d, t in negs))


class TestGradient:
    def test_zero_for_lone_instance(self, encoder):
        batch = [inst("q", "alpha", "d1", "beta gamma")]
        loss, grad = batch_loss_and_grad(encoder.table, encoder, batch, TrainConfig())
        assert loss == 0.0 and not grad.any()

    def test_duplicate_doubles_contribution(self, encoder):
        cfg = TrainConfig(temperature=0.3)
        a = inst("a", "alpha beta", "d1", "beta gamma", [("d9", "delta")])
        b = inst("b", "gamma", "d2", "delta alpha")
        loss_a, g_a = _contribution(encoder, [a, b], 0, cfg)
        loss_b, g_b = _contribution(encoder, [a, b], 1, cfg)
        loss, g = batch_loss_and_grad(encoder.table, encoder, [a, a, b], cfg)
        np.testing.assert_allclose(3 * g, 2 * g_a + g_b, atol=1e-12)
        assert 3 * loss == pytest.approx(2 * loss_a + loss_b, abs=1e-12)

    def test_all_oov_query_skipped(self, encoder, caplog):
        batch = [inst("q", "zzz", "d1", "beta"), inst("r", "alpha", "d2", "gamma")]
        loss, grad = batch_loss_and_grad(encoder.table, encoder, batch, TrainConfig())
        assert "no in-vocabulary tokens" in caplog.text
        assert loss > 0 and grad.any()

    def test_finite_differences(self):
        from test_acceptance import gradient_relative_error

        rng = np.random.default_rng(7)
        errors = [gradient_relative_error(rng) for _ in range(10)]
        assert max(errors) < 1e-4


def _contribution(encoder, batch, index, cfg):
    """Loss and gradient of one instance with the rest of the batch kept as peers.

    Other queries are made out-of-vocabulary, which removes them from the loss
    while their positives stay in the candidate pool.
    """
    masked = [b if i == index else TrainingInstance(b.query_id, "zzzz", b.positive_id, b.positive_text)
              for i, b in enumerate(batch)]
    return batch_loss_and_grad(encoder.table, encoder, masked, cfg)


class TestTrain:
    def data(self):
        return [inst(f"q{i}", f"key{i} common", f"d{i}", f"key{i} filler", [(f"d{(i + 1) % 6}", f"key{(i + 1) % 6} filler")])
                for i in range(6)]

    def test_zero_learning_rate(self):
        cfg = TrainConfig(learning_rate=0.0, epochs=3, dim=8, seed=4, batch_size=4)
        init = ToyEncoder.initialize(build_vocab(self.data()), 8, 4)
        enc, _ = train(self.data(), cfg)
        np.testing.assert_array_equal(enc.table, init.table)

    @pytest.mark.parametrize("optimizer", ["adam", "sgd"])
    def test_deterministic(self, optimizer):
        cfg = TrainConfig(learning_rate=0.05, epochs=4, dim=8, seed=3, batch_size=4, optimizer=optimizer)
        a, ha = train(self.data(), cfg)
        b, hb = train(self.data(), cfg)
        assert np.array_equal(a.table, b.table)
        assert ha.records == hb.records

    def test_loss_goes_down(self):
        cfg = TrainConfig(learning_rate=0.05, epochs=30, dim=8, seed=3, batch_size=6, temperature=0.1)
        _, hist = train(self.data(), cfg)
        assert hist.losses()[-1] < hist.losses()[0]

    def test_empty(self):
        with pytest.raises(DataError):
            train([], TrainConfig())

    def test_history_tsv(self):
        cfg = TrainConfig(epochs=2, dim=4, batch_size=3)
        _, hist = train(self.data(), cfg)
        lines = hist.to_tsv().splitlines()
        assert lines[0] == "epoch\tloss\tmrr@10" and len(lines) == 4
        assert lines[1] == "0\t\t"
