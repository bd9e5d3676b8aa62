import numpy as np
import pytest

from core.behaviors.qa import build_balanced_qa_set, build_question, question_classes
from core.errors import ConfigError, ContractError, DimensionError, FormatError, InputError
from core.introspect.adapter import Adapter, project
from core.introspect.capture import BundleCache, capture, capture_cache, capture_many
from core.introspect.evaluate import (
    LinearReadout,
    bundle_features,
    check_scoring,
    evaluate,
    linear_probe_accuracy,
    readout_transfer,
    score_logits,
)
from core.introspect.meta import (
    MetaSample,
    answer_logits,
    assemble_meta_prompt,
    classify_logits,
    inject_and_classify,
    make_meta_sample,
    make_meta_samples,
)
from core.introspect.train import MetaTrainParams, train_meta
from core.nanoformer.model import ActivationBundle, LayerTapSpec, ModelConfig, build_model, forward
from core.tensorkit.tensor import Tape

TAPS = LayerTapSpec((0, 1))


def input_model(vocab, d=32, seed=1):
    return build_model(ModelConfig(n_layers=2, d_model=d, n_heads=2, d_ff=2 * d, vocab_size=vocab.size,
                                   context_len=48, seed=seed))


def meta_model(vocab, d=32, seed=2):
    return build_model(ModelConfig(n_layers=2, d_model=d, n_heads=2, d_ff=2 * d, vocab_size=vocab.size,
                                   context_len=16, seed=seed))


def signal_samples(vocab, n, rng, d=32):
    """Bundles carry +u (Yes) or -u (No) plus noise"""
    u = rng.standard_normal(d)
    question = build_question(vocab, "S", 0)
    out = []
    for i in range(n):
        yes = i % 2 == 0
        vecs = np.stack([(u if yes else -u) + 0.1 * rng.standard_normal(d) for _ in TAPS.layer_indices])
        out.append(make_meta_sample(vocab, question, ActivationBundle(vecs, "src", TAPS), yes, "S:0", f"s{i}"))
    return out


class TestAdapter:
    def test_identity_when_square(self):
        a = Adapter.create(8, 8, seed=0)
        assert np.array_equal(a.weight.data, np.eye(8))
        assert not a.bias.data.any()

    def test_random_when_not_square(self):
        a = Adapter.create(400, 300, seed=0)
        assert a.weight.shape == (400, 300)
        assert a.weight.data.var() == pytest.approx(1 / 400, rel=0.05)

    def test_project_preserves_order(self, rng):
        a = Adapter.create(4, 6, seed=1)
        vecs = rng.standard_normal((3, 4)).astype(np.float32)
        out = project(a, ActivationBundle(vecs, "x", LayerTapSpec((0, 1, 2))))
        np.testing.assert_allclose(out, vecs @ a.weight.data, atol=1e-6)

    def test_zero_weight_gives_bias(self, rng):
        a = Adapter.create(4, 3, seed=0)
        a.weight.data[:] = 0.0
        a.bias.data[:] = [1.0, -2.0, 0.5]
        out = project(a, ActivationBundle(rng.standard_normal((2, 4)), "x", LayerTapSpec((0, 1))))
        assert np.array_equal(out, [[1.0, -2.0, 0.5]] * 2)

    def test_width_mismatch(self):
        with pytest.raises(DimensionError):
            project(Adapter.create(4, 4, seed=0), ActivationBundle(np.zeros((1, 5)), "x", LayerTapSpec((0,))))

    def test_empty_bundle(self):
        out = project(Adapter.create(4, 6, seed=0), ActivationBundle(np.zeros((0, 4)), "x", LayerTapSpec()))
        assert out.shape == (0, 6)


class TestMetaPrompt:
    def test_layout(self, vocab):
        q = build_question(vocab, "L", 2)
        tokens = assemble_meta_prompt(vocab, q, 3)
        assert tokens == q + (vocab.PLACEHOLDER,) * 3 + (vocab.META,)

    def test_needs_placeholders(self, vocab):
        with pytest.raises(ContractError):
            assemble_meta_prompt(vocab, build_question(vocab, "S", 0), 0)

    def test_context_overflow(self, vocab):
        with pytest.raises(InputError):
            assemble_meta_prompt(vocab, build_question(vocab, "S", 0), 12, context_len=16)

    def test_sample_positions(self, vocab, rng):
        s = signal_samples(vocab, 1, rng)[0]
        assert s.positions == (6, 7)
        assert s.gold_token == vocab.YES

    def test_placeholder_count_must_match(self, vocab):
        bundle = ActivationBundle(np.zeros((2, 4)), "x", TAPS)
        with pytest.raises(ContractError):
            MetaSample((1, 2, 3), (1,), bundle, True, vocab.YES, vocab.NO)


class TestInjection:
    def test_own_embeddings_reproduce_plain_forward(self, vocab):
        model = meta_model(vocab)
        adapter = Adapter.create(32, 32, seed=0)
        rng = np.random.default_rng(17)
        tags = ["S", "E", "L", "M", "LIE"]
        for case in range(100):
            tag = tags[case % len(tags)]
            q = build_question(vocab, tag, int(rng.integers(len(question_classes(vocab, tag)))))
            stand_ins = rng.integers(0, vocab.size, size=int(rng.integers(1, 10))).tolist()
            taps = LayerTapSpec(tuple(range(len(stand_ins))))
            bundle = ActivationBundle(model["tok_emb"].data[stand_ins], "x", taps)
            sample = make_meta_sample(vocab, q, bundle, bool(case % 2))
            injected = answer_logits(model, adapter, [sample])[0]
            plain = forward(model, np.asarray(q + tuple(stand_ins) + (vocab.META,)))[-1]
            assert np.array_equal(injected, plain)

    def test_bundle_changes_answer(self, vocab, rng):
        model = meta_model(vocab)
        a, b = signal_samples(vocab, 2, rng)
        adapter = Adapter.create(32, 32, seed=0)
        assert inject_and_classify(model, adapter, a).logit_yes != inject_and_classify(model, adapter, b).logit_yes

    def test_does_not_mutate_meta_model(self, vocab, rng):
        model = meta_model(vocab)
        before = model.digest()
        answer_logits(model, Adapter.create(32, 32, seed=0), signal_samples(vocab, 4, rng))
        assert model.digest() == before

    def test_tie_predicts_no(self):
        logits = np.zeros(10)
        assert classify_logits(logits, 3, 4).predicted == "No"
        logits[3] = 0.5
        assert classify_logits(logits, 3, 4).predicted == "Yes"


class TestScoring:
    def _samples(self, vocab, answers):
        bundle = ActivationBundle(np.zeros((1, 4)), "x", LayerTapSpec((0,)))
        return [make_meta_sample(vocab, build_question(vocab, "S", 0), bundle, yes) for yes in answers]

    def test_strict_vs_forced(self, vocab):
        samples = self._samples(vocab, [True, False])
        logits = np.zeros((2, vocab.size))
        logits[:, vocab.EOT] = 5.0
        logits[0, vocab.YES] = 1.0
        logits[1, vocab.NO] = 1.0
        scores = score_logits(logits, samples)
        assert scores.strict == 0.0
        assert scores.forced == 1.0
        assert scores.non_answer == 2
        assert scores.predicted_yes == 1

    def test_random_logits_near_chance(self, vocab):
        rng = np.random.default_rng(7)
        samples = self._samples(vocab, [i % 2 == 0 for i in range(400)])
        scores = score_logits(rng.standard_normal((400, vocab.size)), samples)
        assert abs(scores.forced - 0.5) < 3 * 0.5 / np.sqrt(400)
        assert scores.strict < 0.1

    def test_modes(self):
        with pytest.raises(ConfigError):
            check_scoring("loose")

    def test_empty(self, vocab):
        with pytest.raises(ContractError):
            evaluate(meta_model(vocab), Adapter.create(32, 32, seed=0), [])


class TestCapture:
    def test_batched_matches_single(self, vocab, rng):
        model = input_model(vocab)
        examples = build_balanced_qa_set(vocab, "LIE", 4, rng) + build_balanced_qa_set(vocab, "S", 4, rng)
        prompts = [ex.prompt for ex in examples]
        many = capture_many(model, prompts, TAPS, batch_size=3)
        for p, b in zip(prompts, many):
            np.testing.assert_allclose(b.vectors, capture(model, p, TAPS).vectors, atol=1e-6)

    def test_refuses_taped_context(self, vocab, rng):
        model = input_model(vocab)
        prompt = build_balanced_qa_set(vocab, "S", 2, rng)[0].prompt
        with Tape():
            with pytest.raises(ContractError):
                capture(model, prompt, TAPS)

    def test_input_model_untouched(self, vocab, rng):
        model = input_model(vocab)
        before = model.digest()
        capture_cache(model, build_balanced_qa_set(vocab, "E", 8, rng), TAPS)
        assert model.digest() == before

    def test_cache_file(self, vocab, rng, tmp_path):
        examples = build_balanced_qa_set(vocab, "M", 6, rng)
        cache = capture_cache(input_model(vocab), examples, TAPS)
        path = cache.save(tmp_path / "b.bin")
        loaded = BundleCache.load(path)
        assert len(loaded) == 6
        for ex in examples:
            assert np.array_equal(loaded.get(ex.uid).vectors, cache.get(ex.uid).vectors)
            assert loaded.get(ex.uid).tap_spec == TAPS
        with pytest.raises(ConfigError):
            loaded.get("missing")
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(FormatError):
            BundleCache.load(path)

    def test_cache_rejects_mixed_sources(self):
        a = ActivationBundle(np.zeros((1, 4)), "one", LayerTapSpec((0,)))
        b = ActivationBundle(np.zeros((1, 4)), "two", LayerTapSpec((0,)))
        with pytest.raises(ContractError):
            BundleCache({"a": a, "b": b})

    def test_behavior_is_linearly_decodable(self, vocab):
        rng = np.random.default_rng(3)
        examples = build_balanced_qa_set(vocab, "S", 400, rng)
        bundles = capture_many(input_model(vocab), [ex.prompt for ex in examples], TAPS)
        features = np.stack([b.vectors.reshape(-1) for b in bundles])
        labels = [ex.label.value for ex in examples]
        assert linear_probe_accuracy(features, labels, seed=0) > 0.7


class TestReadout:
    def test_fits_separable_classes(self, rng):
        x = np.concatenate([rng.standard_normal((20, 3)) + 4.0, rng.standard_normal((20, 3)) - 4.0])
        y = [1] * 20 + [0] * 20
        readout = LinearReadout.fit(x, y)
        assert readout.accuracy(x, y) == 1.0
        assert list(readout.predict(np.array([[5.0, 5.0, 5.0], [-5.0, -5.0, -5.0]]))) == [1, 0]

    def test_keeps_label_values(self, rng):
        x = np.concatenate([rng.standard_normal((10, 2)) + 3.0, rng.standard_normal((10, 2)) - 3.0])
        readout = LinearReadout.fit(x, [7] * 10 + [2] * 10)
        assert set(readout.predict(x)) == {2, 7}

    def test_width_mismatch(self, rng):
        readout = LinearReadout.fit(rng.standard_normal((6, 3)), [0, 1] * 3)
        with pytest.raises(DimensionError):
            readout.predict(np.zeros((2, 4)))

    def test_needs_two_rows(self):
        with pytest.raises(ContractError):
            LinearReadout.fit(np.zeros((1, 3)), [0])

    def test_transfer_on_bundles(self, vocab, rng):
        samples = signal_samples(vocab, 24, rng)
        assert bundle_features(samples).shape == (24, 2 * 32)
        assert readout_transfer(samples[:16], samples[16:]) == 1.0

    def test_transfer_needs_both_sets(self, vocab, rng):
        with pytest.raises(ContractError):
            readout_transfer(signal_samples(vocab, 4, rng), [])


class TestMetaTraining:
    def test_learns_separable_signal(self, vocab):
        rng = np.random.default_rng(11)
        samples = signal_samples(vocab, 32, rng)
        model, adapter = meta_model(vocab), Adapter.create(32, 32, seed=0)
        report = train_meta(model, adapter, {"S": samples},
                            MetaTrainParams(steps=300, batch_size=32, lr=3e-3, warmup_steps=0, log_every=0), seed=0)
        assert report.last_loss <= 0.1 * report.first_loss
        assert evaluate(model, adapter, samples).strict >= 0.9

    def test_deterministic(self, vocab):
        digests = []
        for _ in range(2):
            samples = signal_samples(vocab, 8, np.random.default_rng(5))
            model, adapter = meta_model(vocab), Adapter.create(32, 32, seed=0)
            train_meta(model, adapter, [samples], MetaTrainParams(steps=3, batch_size=4, log_every=0), seed=9)
            digests.append((model.digest(), adapter.digest()))
        assert digests[0] == digests[1]

    def test_trains_adapter_and_tracks_epochs(self, vocab, rng):
        samples = signal_samples(vocab, 8, rng)
        model, adapter = meta_model(vocab), Adapter.create(32, 32, seed=0)
        before = adapter.digest()
        report = train_meta(model, adapter, {"S": samples}, MetaTrainParams(steps=4, batch_size=4, log_every=0),
                            seed=0, eval_samples=samples[:4])
        assert adapter.digest() != before
        assert report.steps == 4
        assert len(report.epoch_losses) == 2
        assert len(report.eval_accuracy) == 2

    def test_empty_mix(self, vocab):
        with pytest.raises(ConfigError):
            train_meta(meta_model(vocab), Adapter.create(32, 32, seed=0), {"S": []}, MetaTrainParams(), seed=0)

    def test_samples_from_examples(self, vocab, rng):
        examples = build_balanced_qa_set(vocab, "S", 4, rng)
        bundles = capture_many(input_model(vocab), [ex.prompt for ex in examples], TAPS)
        samples = make_meta_samples(vocab, examples, bundles)
        assert [s.answer_yes for s in samples] == [ex.answer_yes for ex in examples]
        with pytest.raises(ContractError):
            make_meta_samples(vocab, examples, bundles[:2])

