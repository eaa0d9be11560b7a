import numpy as np
import pytest

from cryptogen.src.entity.constants import Component, CounterField
from cryptogen.src.entity.errors import DimensionError
from cryptogen.src.entity.model import Model, ModelConfig, quantize
from cryptogen.src.interface.pipelines import (
	EncryptedGeneration,
	GenerationState,
	StatelessGeneration,
	decode_step,
	oracle_generate,
	prefill,
)
from cryptogen.src.services.costmodel import CostDims, fit_exponent, quadratic_coefficient, validate_against_counts
from cryptogen.src.services.kv_cache import load_cache, save_cache
from cryptogen.src.services.model_store import synthesize_weights


def _prompt(seed: int, m: int, vocab: int) -> list:
	return [int(token) for token in np.random.default_rng(seed).integers(0, vocab, size=m)]


def _generation(model, session, cls=EncryptedGeneration, n_slots: int = 64, seed: int = 0, params=None, **kwargs):
	ctx, channel = session(n_slots=n_slots, seed=seed, **(params or {}))
	return cls(model, ctx=ctx, channel=channel, **kwargs)


def _small_model(max_seq: int, seed: int = 0) -> Model:
	config = ModelConfig(layers=1, hidden=8, heads=2, ffn_dim=16, vocab=12, max_seq=max_seq)
	return Model(config=config, weights=quantize(synthesize_weights(config, seed), config.frac_bits))


def _oracle(model, gen, prompt, k):
	tokens, _ = oracle_generate(model, prompt, k, gen.fp)
	return tokens


@pytest.mark.parametrize('seed', [0, 1, 2])
def test_tokens_match_oracle(toy_model, session, seed):
	gen = _generation(toy_model, session, seed=seed)
	prompt = _prompt(seed, 8, toy_model.config.vocab)
	tokens, report = gen.generate(prompt, 16)
	assert len(tokens) == 16
	assert tokens == _oracle(toy_model, gen, prompt, 16)
	assert report.tokens == tokens
	assert len(report.steps) == 15


@pytest.mark.slow
@pytest.mark.parametrize('seed', range(3, 20))
def test_tokens_match_oracle_more_seeds(toy_model, session, seed):
	gen = _generation(toy_model, session, seed=seed)
	prompt = _prompt(seed, 8, toy_model.config.vocab)
	tokens, _ = gen.generate(prompt, 16)
	assert tokens == _oracle(toy_model, gen, prompt, 16)


def test_module_functions(toy_model, session):
	ctx, channel = session()
	prompt = _prompt(5, 6, toy_model.config.vocab)
	state = prefill(toy_model, prompt, ctx, channel)
	state = decode_step(toy_model, state, ctx, channel)
	tokens, _ = oracle_generate(toy_model, prompt, 2, toy_model.config.fixed_point(ctx.p))
	assert state.sequence == prompt + tokens[:1]
	assert state.next_token == tokens[1]


def test_reference_drift_is_reported(toy_model, session):
	gen = _generation(toy_model, session)
	prompt = _prompt(9, 6, toy_model.config.vocab)
	_, report = oracle_generate(toy_model, prompt, 4, gen.fp, reference=True)
	assert len(report.drift) == 4
	assert all(np.isfinite(value) and value >= 0 for value in report.drift)


def test_decode_cost_does_not_depend_on_prompt(toy_model, session):
	per_step = []
	for m in (16, 32, 64):
		gen = _generation(toy_model, session)
		_, report = gen.generate(_prompt(m, m, toy_model.config.vocab), 4)
		per_step.append([entry['counters'].homomorphic() for entry in report.steps])
	assert per_step[0] == per_step[1] == per_step[2]


def test_decode_attention_grows_with_blocks(toy_model, session):
	gen = _generation(toy_model, session)
	_, report = gen.generate(_prompt(3, 4, toy_model.config.vocab), 12)
	config = toy_model.config
	block = 64 // config.head_dim
	for entry in report.steps:
		t = entry['step']
		expected = (2 * config.head_dim + 2 * -(-t // block)) * config.layers * config.heads
		assert entry['breakdown'][Component.CTCT.value].mult_cipher == expected
	assert report.steps[-1]['cache']['auto_cts'] == -(-11 // block)
	assert report.steps[-1]['cache']['t_auto'] == 11


def test_validation_passes(toy_model, session):
	gen = _generation(toy_model, session)
	prompt = _prompt(4, 8, toy_model.config.vocab)
	_, report = gen.generate(prompt, 16)
	dims = CostDims(m=8, d1=toy_model.config.hidden, d2=toy_model.config.head_dim, n=64, k=16)
	validation = validate_against_counts(report, dims)
	assert validation.passed, [item.as_dict() for item in validation.failures()]
	assert validation.as_dict()['passed'] is True
	with pytest.raises(DimensionError):
		validate_against_counts(report, CostDims(m=9, d1=32, d2=8, n=64, k=16))


@pytest.mark.slow
def test_scaling_exponents(toy_model, session):
	points = (8, 16, 32, 64)
	gen = _generation(toy_model, session)
	_, report = gen.generate(_prompt(1, 4, toy_model.config.vocab), 64)
	cumulative = report.cumulative(CounterField.MULT_CIPHER.value)
	assert abs(fit_exponent(points, [cumulative[k - 1] for k in points]) - 1.0) <= 0.1

	# с одним токеном запроса накопленная стоимость без кэша равна k(k+1)/2 повторным предзаполнениям
	stateless = _generation(toy_model, session, cls=StatelessGeneration)
	_, report = stateless.generate(_prompt(1, 1, toy_model.config.vocab), 32)
	cumulative = report.cumulative(CounterField.MULT_CIPHER.value)
	assert abs(fit_exponent(points[:3], [cumulative[k - 1] for k in points[:3]]) - 2.0) <= 0.2
	assert quadratic_coefficient(range(1, 33), cumulative) > 1e-3


@pytest.mark.slow
def test_cached_growth_is_linear_with_wide_blocks(toy_model, session):
	gen = _generation(toy_model, session, n_slots=2048)
	prompt = _prompt(2, 4, toy_model.config.vocab)
	tokens, report = gen.generate(prompt, 32)
	assert tokens == _oracle(toy_model, gen, prompt, 32)
	cumulative = report.cumulative(CounterField.MULT_CIPHER.value)
	assert abs(quadratic_coefficient(range(1, 33), cumulative)) < 1e-6


def test_stateless_matches_oracle(toy_model, session):
	gen = _generation(toy_model, session, cls=StatelessGeneration)
	prompt = _prompt(6, 3, toy_model.config.vocab)
	tokens, report = gen.generate(prompt, 4)
	assert tokens == _oracle(toy_model, gen, prompt, 4)
	assert report.steps[-1]['cache']['auto_cts'] == 0


def test_threads_match_serial(toy_model, session):
	prompt = _prompt(8, 6, toy_model.config.vocab)
	runs = []
	for threads in (1, 4):
		gen = _generation(toy_model, session, seed=11, threads=threads)
		tokens, report = gen.generate(prompt, 5)
		runs.append((tokens, report.totals(), gen.channel.bytes_sent))
	assert runs[0] == runs[1]


def test_zero_and_one_tokens(toy_model, session):
	prompt = _prompt(12, 5, toy_model.config.vocab)
	tokens, report = _generation(toy_model, session).generate(prompt, 0)
	assert tokens == []
	assert report.steps == []
	assert report.prefill['token'] is None
	tokens, report = _generation(toy_model, session).generate(prompt, 1)
	assert len(tokens) == 1
	assert report.steps == []
	assert report.as_dict()['tokens'] == tokens


def test_forced_refresh_keeps_tokens(toy_model, session):
	prompt = _prompt(13, 6, toy_model.config.vocab)
	plain, _ = _generation(toy_model, session).generate(prompt, 6)
	tokens, report = _generation(toy_model, session, force_refresh={3}).generate(prompt, 6)
	assert tokens == plain
	assert report.refresh_events
	assert report.totals().refresh_events == len(report.refresh_events)


def test_refresh_threshold_during_generation(toy_model, session):
	gen = _generation(toy_model, session, params={'refresh_threshold': 170})
	prompt = _prompt(14, 6, toy_model.config.vocab)
	tokens, report = gen.generate(prompt, 8)
	assert tokens == _oracle(toy_model, gen, prompt, 8)
	assert report.refresh_events
	assert all(event.budget_before <= 170 for event in report.refresh_events)
	assert report.steps[-1]['cache']['refresh_count'] > 0


@pytest.mark.slow
def test_long_generation_keeps_budget(session):
	model = _small_model(max_seq=520)
	gen = _generation(model, session, params={'refresh_threshold': 170})
	prompt = _prompt(15, 4, model.config.vocab)
	tokens, report = gen.generate(prompt, 512)
	assert tokens == _oracle(model, gen, prompt, 512)
	assert report.refresh_events
	assert all(event.budget_before <= 170 for event in report.refresh_events if not event.forced)
	assert report.steps[-1]['cache']['t_auto'] == 511


def test_resume_from_saved_caches(tmp_path, toy_model, session):
	gen = _generation(toy_model, session)
	state = gen.decode_step(gen.prefill(_prompt(16, 5, toy_model.config.vocab)))
	caches = []
	for layer, heads in enumerate(state.caches):
		restored = []
		for head, cache in enumerate(heads):
			path = tmp_path / f'{layer}-{head}'
			save_cache(cache, str(path), gen.ctx)
			restored.append(load_cache(str(path), gen.ctx))
		caches.append(restored)
	resumed = GenerationState(sequence=state.sequence, caches=caches, logits=state.logits)
	expected = gen.decode_step(state)
	actual = gen.decode_step(resumed)
	assert np.array_equal(actual.logits, expected.logits)
	assert actual.sequence == expected.sequence


def test_rejects_bad_prompts(toy_model, session):
	gen = _generation(toy_model, session)
	with pytest.raises(DimensionError):
		gen.generate([], 3)
	with pytest.raises(DimensionError):
		gen.generate([toy_model.config.vocab], 3)
	with pytest.raises(DimensionError):
		gen.generate([1, 2], -1)
	with pytest.raises(DimensionError):
		gen.generate([1] * 100, 40)


def test_sequence_length_bound(session):
	model = _small_model(max_seq=12)
	gen = _generation(model, session)
	prompt = _prompt(17, 8, model.config.vocab)
	with pytest.raises(DimensionError):
		gen.generate(prompt, 5)
	with pytest.raises(DimensionError):
		gen.generate(prompt + [1, 2, 3, 4, 5], 0)
	tokens, _ = gen.generate(prompt, 4)
	assert len(prompt) + len(tokens) == model.config.max_seq
	assert tokens == _oracle(model, gen, prompt, 4)


def test_rejects_narrow_context(toy_model, session):
	with pytest.raises(DimensionError):
		_generation(toy_model, session, n_slots=16)
