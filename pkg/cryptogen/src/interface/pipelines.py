"""
Конвейеры генерации.

EncryptedGeneration   предзаполнение и пошаговая генерация над гетерогенным кэшем
StatelessGeneration   каждый шаг заново выполняет предзаполнение всей последовательности
OracleGeneration      та же арифметика с фиксированной точкой в открытом виде

Линейные слои выполняются над шифротекстами сервером, нелинейные над долями.
Между ними значения переходят через he_to_shares / shares_to_he.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from cryptogen.src.entity.backend import Context, OpCounter, SlotCiphertext, next_power_of_two
from cryptogen.src.entity.constants import Component, Direction, EncodingKind, Message
from cryptogen.src.entity.encodings import PackedMatrix, encode, make_encoding
from cryptogen.src.entity.errors import DimensionError
from cryptogen.src.entity import fixed_point
from cryptogen.src.entity.fixed_point import FixedPointParams
from cryptogen.src.entity.model import Model
from cryptogen.src.services.arcc import attention_scale, attention_step, prefill_attention
from cryptogen.src.services.kv_cache import append_token, cache_stats, init_cache, maybe_refresh
from cryptogen.src.services.linear_kernels import (
	add_bias_inner,
	add_bias_outer,
	cpmm_outer_diagonal,
	cpvm_inner_diagonal,
)
from cryptogen.src.services.nonlinear import (
	MpcChannel,
	SharePair,
	he_to_shares,
	mpc_gelu,
	mpc_layernorm,
	mpc_truncate,
	rescale,
	shares_to_he,
)
from cryptogen.src.services.serializers import RunReportSerializer

logger = logging.getLogger(__name__)

HEAD_WEIGHTS = (('w_q', 'b_q'), ('w_k', 'b_k'), ('w_v', 'b_v'))


class GenerationState:
	"""Обработанная последовательность, кэши по слоям и головам и логиты последней позиции"""

	def __init__(self, *, sequence, caches, logits):
		self.sequence = [int(token) for token in sequence]
		self.caches = caches
		self.logits = np.asarray(logits)

	@property
	def position(self) -> int:
		return len(self.sequence)

	@property
	def next_token(self) -> int:
		return int(np.argmax(self.logits))


class RunReport:
	def __init__(self, *, prompt, params: dict = None):
		self.prompt = [int(token) for token in prompt]
		self.params = params or {}
		self.tokens = []
		self.prefill = None
		self.steps = []
		self.refresh_events = []
		self.drift = []

	def entries(self) -> list:
		return ([self.prefill] if self.prefill is not None else []) + self.steps

	def totals(self) -> OpCounter:
		total = OpCounter()
		for entry in self.entries():
			total.merge(entry['counters'])
		return total

	def cumulative(self, field: str) -> list:
		"""Нарастающий итог счётчика: предзаполнение, затем каждый шаг"""
		values, running = [], 0
		for entry in self.entries():
			running += entry['counters'].as_dict()[field]
			values.append(running)
		return values

	def as_dict(self) -> dict:
		return RunReportSerializer({
			'prompt': self.prompt,
			'tokens': self.tokens,
			'params': self.params,
			'prefill': self.prefill,
			'steps': self.steps,
			'totals': self.totals(),
			'refresh_events': [event.as_dict() for event in self.refresh_events],
		}).data


class Generation:
	"""Базовая стратегия генерации на шаблонном методе generate"""

	def __init__(self, model: Model, fp: FixedPointParams):
		self.model = model
		self.config = model.config
		self.fp = fp

	def prefill(self, prompt) -> GenerationState:
		raise NotImplementedError()

	def decode_step(self, state: GenerationState) -> GenerationState:
		raise NotImplementedError()

	def describe(self) -> dict:
		return {'model': self.config.as_dict(), 'frac_bits': self.fp.frac_bits, 'modulus': self.fp.modulus}

	def snapshot(self):
		return None

	def entry(self, step: int, token, start, state: GenerationState) -> dict:
		return {'step': step, 'token': token, 'counters': OpCounter(), 'breakdown': {}, 'cache': {}, 'mpc_rounds': 0}

	def refresh_events(self, state: GenerationState) -> list:
		return []

	def check_prompt(self, prompt, k: int) -> list:
		prompt = [int(token) for token in prompt]
		if not prompt:
			raise DimensionError(Message.EMPTY_PROMPT.value)
		if k < 0:
			raise DimensionError(Message.INVALID_DIMS.value)
		if any(token < 0 or token >= self.config.vocab for token in prompt):
			raise DimensionError(Message.TOKEN_OUT_OF_VOCAB.value)
		if len(prompt) + k > self.config.max_seq:
			raise DimensionError(Message.SEQUENCE_TOO_LONG.value)
		return prompt

	def generate(self, prompt, k: int):
		"""
		Первый токен берётся из логитов предзаполнения, затем k - 1 шагов генерации.
		Возвращает (токены, отчёт).
		"""
		prompt = self.check_prompt(prompt, k)
		report = RunReport(prompt=prompt, params=self.describe())
		start = self.snapshot()
		state = self.prefill(prompt)
		tokens = [state.next_token] if k else []
		report.prefill = self.entry(0, tokens[0] if tokens else None, start, state)
		report.drift.append(self.drift(state))
		for step in range(1, k):
			start = self.snapshot()
			state = self.decode_step(state)
			tokens.append(state.next_token)
			report.steps.append(self.entry(step, tokens[-1], start, state))
			report.drift.append(self.drift(state))
			logger.info('step %s token %s', step, tokens[-1])
		report.tokens = tokens
		report.refresh_events = self.refresh_events(state)
		return tokens, report

	def drift(self, state: GenerationState):
		return None


class EncryptedGeneration(Generation):
	"""
	Генерация над шифротекстами. Головы одного слоя обрабатываются на
	дочерних контекстах и каналах, при threads > 1 в пуле потоков.
	"""

	def __init__(
		self, model: Model, *, ctx: Context, channel: MpcChannel, fp: FixedPointParams = None,
		threads: int = 1, force_refresh=()
	):
		super().__init__(model, fp or model.config.fixed_point(ctx.p))
		if channel.modulus != ctx.p or self.fp.modulus != ctx.p:
			raise DimensionError(Message.SHARE_MODULUS.value)
		self.config.check_slots(ctx.n)
		self.ctx = ctx
		self.channel = channel
		if channel.counter is None:
			channel.counter = ctx.counter
		self.threads = max(1, int(threads))
		self.force_refresh = set(force_refresh)
		self._diagonals = {}

	def describe(self) -> dict:
		return {**super().describe(), 'backend': self.ctx.params.as_dict(), 'threads': self.threads}

	# веса

	def _weight(self, layer: int, name: str, head: int = None) -> PackedMatrix:
		key = (layer, name, head)
		if key not in self._diagonals:
			W = self.model.layer(layer, name) if layer is not None else self.model[name]
			if head is not None:
				W = W[:, self.config.head_slice(head)]
			self._diagonals[key] = encode(W, EncodingKind.DIAGONAL.value, self.ctx)
		return self._diagonals[key]

	def _bias(self, layer: int, name: str, head: int = None) -> np.ndarray:
		"""Смещение в масштабе 2f, как у результата умножения на веса"""
		b = self.model.layer(layer, name)
		if head is not None:
			b = b[self.config.head_slice(head)]
		return b * self.fp.scale

	def _norm(self, layer: int, prefix: str):
		if layer is None:
			return self.model[f'{prefix}_g'], self.model[f'{prefix}_b']
		return self.model.layer(layer, f'{prefix}_g'), self.model.layer(layer, f'{prefix}_b')

	def _prepare(self, layer: int):
		for head in range(self.config.heads):
			for name, _ in HEAD_WEIGHTS:
				self._weight(layer, name, head)
		for name in ('w_o', 'w_1', 'w_2'):
			self._weight(layer, name)

	# головы

	def _run_heads(self, task) -> list:
		"""task(head, ctx, ch) для каждой головы на дочерних контексте и канале"""
		forks = []
		for head in range(self.config.heads):
			child = self.ctx.fork()
			forks.append((head, child, self.channel.fork(counter=child.counter)))
		if self.threads > 1:
			with ThreadPoolExecutor(max_workers=self.threads) as pool:
				results = list(pool.map(lambda item: task(*item), forks))
		else:
			results = [task(*item) for item in forks]
		self.ctx.join(*(child for _, child, _ in forks))
		self.channel.join(*(ch for _, _, ch in forks))
		return results

	# переходы между упаковками

	def _embed(self, tokens, start: int) -> SharePair:
		"""Клиент вычисляет эмбеддинг и передаёт серверу его долю"""
		values = self.fp.wrap(self.model.embed(tokens, start))
		self.channel.send('embed', Direction.TO_SERVER.value, values.size)
		return self.channel.share(values)

	def _to_columns(self, s: SharePair, ctx: Context, ch: MpcChannel) -> PackedMatrix:
		"""Доли m×d в Outer: по шифротексту на столбец"""
		rows, cols = s.shape
		with ctx.track(Component.NONLINEAR.value):
			parts = [shares_to_he(s[:, j], ctx, ch) for j in range(cols)]
		encoding = make_encoding(EncodingKind.OUTER.value, rows, cols, ctx.n)
		return PackedMatrix(encoding=encoding, parts=parts, encrypted=True)

	def _from_columns(self, Y: PackedMatrix, ctx: Context, ch: MpcChannel) -> SharePair:
		"""Outer с любым числом столбцов на шифротекст в доли m×d"""
		encoding = Y.encoding
		rows, per_part = Y.rows, encoding.block_size
		columns = []
		for index, part in enumerate(Y.parts):
			here = range(index * per_part, min(Y.cols, (index + 1) * per_part))
			positions = np.concatenate([(j % per_part) * encoding.block_width + np.arange(rows) for j in here])
			pair = he_to_shares(part, ctx, ch, positions)
			columns.extend(pair[c * rows:(c + 1) * rows] for c in range(len(here)))
		return SharePair.stack(columns, axis=1)

	# линейные слои

	def _project_rows(
		self, H: PackedMatrix, layer: int, name: str, bias: str, head: int, ctx: Context, ch: MpcChannel
	) -> SharePair:
		with ctx.track(Component.CTPT.value):
			Y = cpmm_outer_diagonal(H, self._weight(layer, name, head), ctx)
			Y = add_bias_outer(Y, self._bias(layer, bias, head), ctx)
		with ctx.track(Component.NONLINEAR.value):
			return mpc_truncate(self._from_columns(Y, ctx, ch), self.fp, ch)

	def _project_token(
		self, x: SlotCiphertext, layer: int, name: str, bias: str, ctx: Context, ch: MpcChannel
	) -> SharePair:
		W = self._weight(layer, name)
		with ctx.track(Component.CTPT.value):
			y = add_bias_inner(cpvm_inner_diagonal(x, W, ctx), self._bias(layer, bias), ctx)
		with ctx.track(Component.NONLINEAR.value):
			return mpc_truncate(he_to_shares(y, ctx, ch, positions=np.arange(W.cols)), self.fp, ch)

	def _head_vector(self, h: SlotCiphertext, layer: int, name: str, bias: str, head: int, ctx: Context, ch: MpcChannel):
		"""q, k или v одной головы: шифротекст в слотах 0..d2-1, масштаб f"""
		with ctx.track(Component.CTPT.value):
			y = cpvm_inner_diagonal(h, self._weight(layer, name, head), ctx)
			y = add_bias_inner(y, self._bias(layer, bias, head), ctx)
		with ctx.track(Component.NONLINEAR.value):
			return rescale(y, self.config.head_dim, self.fp, ctx, ch)

	def _feed_forward_rows(self, x: SharePair, layer: int) -> SharePair:
		ctx, ch, fp = self.ctx, self.channel, self.fp
		with ctx.track(Component.NONLINEAR.value):
			h = mpc_layernorm(x, *self._norm(layer, 'ln2'), fp, ch)
		f1 = self._project_rows(self._to_columns(h, ctx, ch), layer, 'w_1', 'b_1', None, ctx, ch)
		with ctx.track(Component.NONLINEAR.value):
			g = mpc_gelu(f1, fp, ch)
		return self._project_rows(self._to_columns(g, ctx, ch), layer, 'w_2', 'b_2', None, ctx, ch)

	def _feed_forward_token(self, x: SharePair, layer: int) -> SharePair:
		ctx, ch, fp = self.ctx, self.channel, self.fp
		with ctx.track(Component.NONLINEAR.value):
			h = shares_to_he(mpc_layernorm(x, *self._norm(layer, 'ln2'), fp, ch), ctx, ch)
		f1 = self._project_token(h, layer, 'w_1', 'b_1', ctx, ch)
		with ctx.track(Component.NONLINEAR.value):
			g = shares_to_he(mpc_gelu(f1, fp, ch), ctx, ch)
		return self._project_token(g, layer, 'w_2', 'b_2', ctx, ch)

	def _logits(self, x: SharePair) -> np.ndarray:
		"""Финальная нормализация, проекция на словарь и расшифрование у клиента; масштаб 2f"""
		ctx, ch = self.ctx, self.channel
		with ctx.track(Component.NONLINEAR.value):
			h = shares_to_he(mpc_layernorm(x, *self._norm(None, 'lnf'), self.fp, ch), ctx, ch)
		with ctx.track(Component.CTPT.value):
			y = cpvm_inner_diagonal(h, self._weight(None, 'w_u'), ctx)
		return self.fp.to_signed(ctx.decrypt(y).slots[:self.config.vocab])

	# предзаполнение

	def _prefill_head(self, h: PackedMatrix, layer: int, head: int, ctx: Context, ch: MpcChannel):
		q, k, v = (
			self._to_columns(self._project_rows(h, layer, name, bias, head, ctx, ch), ctx, ch)
			for name, bias in HEAD_WEIGHTS
		)
		out = prefill_attention(q, k, v, self.fp, ctx, ch)
		with ctx.track(Component.CACHE.value):
			cache = init_cache(k, v, ctx)
		return out, cache

	def prefill(self, prompt) -> GenerationState:
		ctx, ch, fp = self.ctx, self.channel, self.fp
		m = len(prompt)
		if not m:
			raise DimensionError(Message.EMPTY_PROMPT.value)
		if next_power_of_two(m) > ctx.n:
			raise DimensionError(f'{Message.SLOT_OVERFLOW.value}: m={m}')
		x = self._embed(prompt, 0)
		caches = []
		for layer in range(self.config.layers):
			self._prepare(layer)
			with ctx.track(Component.NONLINEAR.value):
				h = mpc_layernorm(x, *self._norm(layer, 'ln1'), fp, ch)
			h = self._to_columns(h, ctx, ch)
			results = self._run_heads(lambda head, hctx, hch: self._prefill_head(h, layer, head, hctx, hch))
			caches.append([cache for _, cache in results])
			encoding = make_encoding(EncodingKind.OUTER.value, m, self.config.hidden, ctx.n)
			attended = PackedMatrix(
				encoding=encoding, parts=[part for out, _ in results for part in out.parts], encrypted=True
			)
			x = x + self._project_rows(attended, layer, 'w_o', 'b_o', None, ctx, ch)
			x = x + self._feed_forward_rows(x, layer)
		logger.debug('prefill m=%s done', m)
		return GenerationState(sequence=prompt, caches=caches, logits=self._logits(x[m - 1]))

	# генерация

	def _decode_head(self, h: SlotCiphertext, layer: int, head: int, cache, ctx: Context, ch: MpcChannel):
		q, k, v = (self._head_vector(h, layer, name, bias, head, ctx, ch) for name, bias in HEAD_WEIGHTS)
		with ctx.track(Component.CACHE.value):
			cache = maybe_refresh(cache, ctx, ch, force=cache.t_auto + 1 in self.force_refresh)
			cache = append_token(cache, k, v, ctx)
		return attention_step(q, cache, self.fp, ctx, ch), cache

	def decode_step(self, state: GenerationState) -> GenerationState:
		ctx, ch, fp = self.ctx, self.channel, self.fp
		token = state.next_token
		x = self._embed([token], state.position)[0]
		d2 = self.config.head_dim
		caches = []
		for layer in range(self.config.layers):
			self._prepare(layer)
			with ctx.track(Component.NONLINEAR.value):
				h = shares_to_he(mpc_layernorm(x, *self._norm(layer, 'ln1'), fp, ch), ctx, ch)
			previous = state.caches[layer]
			results = self._run_heads(
				lambda head, hctx, hch: self._decode_head(h, layer, head, previous[head], hctx, hch)
			)
			caches.append([cache for _, cache in results])
			with ctx.track(Component.CTPT.value):
				joined = ctx.sum(out if head == 0 else ctx.rotate(out, -head * d2) for head, (out, _) in enumerate(results))
			x = x + self._project_token(joined, layer, 'w_o', 'b_o', ctx, ch)
			x = x + self._feed_forward_token(x, layer)
		return GenerationState(sequence=state.sequence + [token], caches=caches, logits=self._logits(x))

	# отчёт

	def snapshot(self):
		breakdown = {name: counter.copy() for name, counter in self.ctx.breakdown.items()}
		return self.ctx.snapshot(), breakdown, self.channel.rounds

	def entry(self, step: int, token, start, state: GenerationState) -> dict:
		counter, breakdown, rounds = start
		delta = {}
		for name in Component.values:
			current = self.ctx.breakdown.get(name, OpCounter())
			delta[name] = current - breakdown.get(name, OpCounter())
		return {
			'step': step,
			'token': token,
			'counters': self.ctx.snapshot() - counter,
			'breakdown': delta,
			'cache': self.cache_summary(state),
			'mpc_rounds': self.channel.rounds - rounds,
		}

	def cache_summary(self, state: GenerationState) -> dict:
		"""Сумма по всем кэшам; auto_cts и t_auto для одной головы"""
		stats = [cache_stats(cache, self.ctx) for layer in state.caches for cache in layer]
		summary = {key: sum(item[key] for item in stats) for key in ('ct_count', 'refresh_count', 'refresh_bytes', 'bytes')}
		first = stats[0] if stats else {}
		summary.update({key: first.get(key, 0) for key in ('auto_cts', 't_auto', 'prefill_len')})
		return summary

	def refresh_events(self, state: GenerationState) -> list:
		return [event for layer in state.caches for cache in layer for event in cache.refresh_log]


class StatelessGeneration(EncryptedGeneration):
	"""Без кэша: каждый шаг повторяет предзаполнение всей последовательности"""

	def decode_step(self, state: GenerationState) -> GenerationState:
		return self.prefill(state.sequence + [state.next_token])


class OracleGeneration(Generation):
	"""
	Открытая модель с той же арифметикой: произведения приводятся по модулю p,
	после каждого ядра значение оборачивается в диапазон со знаком. При
	reference=True для каждого шага дополнительно считаются вещественные логиты.
	"""

	def __init__(self, model: Model, fp: FixedPointParams, reference: bool = False):
		super().__init__(model, fp)
		self.reference = reference

	def _linear(self, x, layer, name: str, bias: str, head: int = None) -> np.ndarray:
		W = self.model.layer(layer, name)
		b = self.model.layer(layer, bias)
		if head is not None:
			W, b = W[:, self.config.head_slice(head)], b[self.config.head_slice(head)]
		return fixed_point.truncate(self.fp.wrap(x @ W + b * self.fp.scale), self.fp)

	def _norm(self, x, layer, prefix: str) -> np.ndarray:
		if layer is None:
			gamma, beta = self.model[f'{prefix}_g'], self.model[f'{prefix}_b']
		else:
			gamma, beta = self.model.layer(layer, f'{prefix}_g'), self.model.layer(layer, f'{prefix}_b')
		return self.fp.wrap(fixed_point.layernorm(x, gamma, beta, self.fp))

	def _attend(self, q, keys, values, mask=None) -> np.ndarray:
		fp = self.fp
		scores = fixed_point.truncate(fp.wrap(q @ keys.T), fp)
		scores = fixed_point.truncate(fp.wrap(scores * attention_scale(self.config.head_dim, fp)), fp)
		weights = fp.wrap(fixed_point.softmax(scores, fp, mask=mask))
		return fixed_point.truncate(fp.wrap(weights @ values), fp)

	def _feed_forward(self, x, layer) -> np.ndarray:
		h = self._norm(x, layer, 'ln2')
		g = self.fp.wrap(fixed_point.gelu(self._linear(h, layer, 'w_1', 'b_1'), self.fp))
		return self._linear(g, layer, 'w_2', 'b_2')

	def _logits(self, x) -> np.ndarray:
		return self.fp.wrap(self._norm(x, None, 'lnf') @ self.model['w_u'])

	def _layers(self, x, caches, mask=None):
		"""Прогон слоёв для строк x; caches[layer][head] = (K, V) уже обработанных позиций"""
		fp = self.fp
		updated = []
		for layer in range(self.config.layers):
			h = self._norm(x, layer, 'ln1')
			heads, layer_caches = [], []
			for head in range(self.config.heads):
				q, k, v = (self._linear(h, layer, name, bias, head) for name, bias in HEAD_WEIGHTS)
				if caches is not None:
					past_k, past_v = caches[layer][head]
					k, v = np.concatenate([past_k, k]), np.concatenate([past_v, v])
				layer_caches.append((k, v))
				heads.append(self._attend(q, k, v, mask))
			updated.append(layer_caches)
			x = fp.wrap(x + self._linear(np.concatenate(heads, axis=-1), layer, 'w_o', 'b_o'))
			x = fp.wrap(x + self._feed_forward(x, layer))
		return x, updated

	def prefill(self, prompt) -> GenerationState:
		m = len(prompt)
		x = self.fp.wrap(self.model.embed(prompt, 0))
		x, caches = self._layers(x, None, mask=np.tril(np.ones((m, m), dtype=bool)))
		return GenerationState(sequence=prompt, caches=caches, logits=self._logits(x[m - 1]))

	def decode_step(self, state: GenerationState) -> GenerationState:
		token = state.next_token
		x = self.fp.wrap(self.model.embed([token], state.position))
		x, caches = self._layers(x, state.caches)
		return GenerationState(sequence=state.sequence + [token], caches=caches, logits=self._logits(x[0]))

	def drift(self, state: GenerationState):
		if not self.reference:
			return None
		expected = float_logits(self.model, state.sequence)
		measured = state.logits / float(self.fp.scale * self.fp.scale)
		return float(np.max(np.abs(measured - expected)))


def float_logits(model: Model, sequence) -> np.ndarray:
	"""Вещественный прогон деквантованной модели, логиты последней позиции"""
	config = model.config
	w = model.float_weights()
	m = len(sequence)
	x = w['tok_emb'][np.asarray(sequence)] + w['pos_emb'][:m]
	mask = np.tril(np.ones((m, m), dtype=bool))
	for layer in range(config.layers):
		key = f'layers.{layer}.'
		h = fixed_point.layernorm_reference(x, w[key + 'ln1_g'], w[key + 'ln1_b'])
		heads = []
		for head in range(config.heads):
			part = config.head_slice(head)
			q, k, v = (
				h @ w[key + name][:, part] + w[key + bias][part]
				for name, bias in HEAD_WEIGHTS
			)
			scores = q @ k.T / np.sqrt(config.head_dim)
			heads.append(fixed_point.softmax_reference(scores, mask) @ v)
		x = x + np.concatenate(heads, axis=-1) @ w[key + 'w_o'] + w[key + 'b_o']
		h = fixed_point.layernorm_reference(x, w[key + 'ln2_g'], w[key + 'ln2_b'])
		x = x + fixed_point.gelu_reference(h @ w[key + 'w_1'] + w[key + 'b_1']) @ w[key + 'w_2'] + w[key + 'b_2']
	return fixed_point.layernorm_reference(x[-1], w['lnf_g'], w['lnf_b']) @ w['w_u']


# функции модуля

def prefill(model: Model, prompt, ctx: Context, channel: MpcChannel, fp: FixedPointParams = None) -> GenerationState:
	return EncryptedGeneration(model, ctx=ctx, channel=channel, fp=fp).prefill(prompt)


def decode_step(model: Model, state: GenerationState, ctx: Context, channel: MpcChannel, fp: FixedPointParams = None):
	return EncryptedGeneration(model, ctx=ctx, channel=channel, fp=fp).decode_step(state)


def generate(
	model: Model, prompt, k: int, ctx: Context, channel: MpcChannel, fp: FixedPointParams = None, threads: int = 1
):
	return EncryptedGeneration(model, ctx=ctx, channel=channel, fp=fp, threads=threads).generate(prompt, k)


def stateless_generate(
	model: Model, prompt, k: int, ctx: Context, channel: MpcChannel, fp: FixedPointParams = None, threads: int = 1
):
	return StatelessGeneration(model, ctx=ctx, channel=channel, fp=fp, threads=threads).generate(prompt, k)


def oracle_generate(model: Model, prompt, k: int, fp: FixedPointParams, reference: bool = False):
	return OracleGeneration(model, fp, reference=reference).generate(prompt, k)
