"""
Умножения шифротекст × шифротекст для внимания над гетерогенным кэшем.

arcc_inner_inner  вектор в Inner × базис в Outer: по одной широковещательной
                  рассылке и одному умножению на столбец, повороты не зависят от m
arcc_inner_outer  вектор в Inner × строки в Inner/InnerCompacted: размножение
                  вектора, умножение на шифротекст кэша и свёртка блоков
"""
import logging

import numpy as np

from cryptogen.src.entity.backend import Context, SlotCiphertext, ceil_log2, is_power_of_two, next_power_of_two
from cryptogen.src.entity.constants import Component, EncodingKind, Message, ScoreLayout
from cryptogen.src.entity.encodings import PackedMatrix, tile_token, transpose_view
from cryptogen.src.entity.errors import DimensionError
from cryptogen.src.entity.fixed_point import FixedPointParams
from cryptogen.src.services.kv_cache import KVCache
from cryptogen.src.services.linear_kernels import fold_blocks, fold_sum
from cryptogen.src.services.nonlinear import (
	MpcChannel,
	SharePair,
	he_to_shares,
	mpc_scale,
	mpc_softmax,
	mpc_truncate,
	rescale,
	shares_to_he,
)

logger = logging.getLogger(__name__)


class ScoreVector:
	"""
	Результаты скалярных произведений.
	PrefillAligned: значение r в слоте r единственного шифротекста.
	BlockAligned: значение r в части r // per_part, слот (r % per_part)·block_width.
	"""

	def __init__(self, *, parts, valid_len: int, layout: str, block_width: int = 1, per_part: int = None):
		self.parts = list(parts)
		self.valid_len = valid_len
		self.layout = layout
		self.block_width = block_width
		self.per_part = per_part if per_part is not None else max(valid_len, 1)

	@property
	def ct(self) -> SlotCiphertext:
		if len(self.parts) != 1:
			raise DimensionError(Message.SHAPE_MISMATCH.value)
		return self.parts[0]

	def positions(self):
		"""(часть, слот) каждого значения"""
		if self.layout == ScoreLayout.PREFILL_ALIGNED.value:
			return [(0, r) for r in range(self.valid_len)]
		return [(r // self.per_part, (r % self.per_part) * self.block_width) for r in range(self.valid_len)]

	def decode(self, ctx: Context) -> np.ndarray:
		slots = [ctx.decrypt(part).slots for part in self.parts]
		return np.array([slots[part][slot] for part, slot in self.positions()], dtype=np.int64)


def broadcast_slot(a: SlotCiphertext, j: int, width: int, ctx: Context) -> SlotCiphertext:
	"""
	Копирует a[j] во все слоты 0..width-1: маска, поворот к нулевому слоту,
	затем ⌈log2 width⌉ удвоений. Слоты до следующей степени двойки тоже получают копию.
	"""
	if not 0 <= j < ctx.n or width > ctx.n:
		raise DimensionError(Message.SLOT_OVERFLOW.value)
	x = ctx.rotate(ctx.mult_plain(a, ctx.one_hot([j])), j)
	for i in range(ceil_log2(width)):
		x = ctx.add(x, ctx.rotate(x, -(1 << i)))
	return x


def arcc_inner_inner(coeffs: SlotCiphertext, basis: PackedMatrix, ctx: Context) -> ScoreVector:
	"""
	Σ_j coeffs[j]·basis[:, j] для basis (R×L) в Outer.
	L рассылок и L умножений шифротекстов; результат выровнен с нулевого слота.
	"""
	if basis.kind != EncodingKind.OUTER.value or basis.encoding.block_size != 1:
		raise DimensionError(Message.UNKNOWN_ENCODING.value)
	if basis.rows > ctx.n:
		raise DimensionError(Message.SLOT_OVERFLOW.value)
	acc = None
	for j, column in enumerate(basis.parts):
		product = ctx.mult_cipher(broadcast_slot(coeffs, j, ctx.n, ctx), column)
		acc = product if acc is None else ctx.add(acc, product)
	return ScoreVector(parts=[acc], valid_len=basis.rows, layout=ScoreLayout.PREFILL_ALIGNED.value)


def arcc_inner_outer(v: SlotCiphertext, rows: PackedMatrix, ctx: Context, width: int = None) -> ScoreVector:
	"""
	Скалярные произведения v со строками rows (Inner или InnerCompacted, ширина d).
	Значение для строки r оказывается в начале её блока; width задаёт ширину
	свёртки для Inner (по умолчанию d до степени двойки).
	"""
	d = rows.cols
	if rows.kind == EncodingKind.INNER_COMPACTED.value:
		per_part = rows.encoding.block_size
		stride = rows.encoding.block_width
		if width is not None and width != stride:
			raise DimensionError(Message.SHAPE_MISMATCH.value)
		width = stride
	elif rows.kind == EncodingKind.INNER.value:
		per_part = 1
		width = width or next_power_of_two(d)
		stride = width
	else:
		raise DimensionError(Message.UNKNOWN_ENCODING.value)
	if not is_power_of_two(width) or ctx.n % width or width < d:
		raise DimensionError(Message.NOT_POWER_OF_TWO.value)

	tiled = tile_token(v, stride, per_part, ctx)
	parts = []
	for index, part in enumerate(rows.parts):
		folded = fold_sum(ctx.mult_cipher(tiled, part), width, ctx)
		if rows.kind == EncodingKind.INNER_COMPACTED.value:
			starts = np.arange(rows.encoding.rows_in_part(index)) * stride
		else:
			starts = [0]
		parts.append(ctx.mult_plain(folded, ctx.one_hot(starts)))
	return ScoreVector(
		parts=parts, valid_len=rows.rows, layout=ScoreLayout.BLOCK_ALIGNED.value,
		block_width=stride, per_part=per_part,
	)


def compact_scores(s: ScoreVector, ctx: Context) -> ScoreVector:
	"""Переносит BlockAligned значения в слоты 0..L-1 одного шифротекста"""
	if s.layout == ScoreLayout.PREFILL_ALIGNED.value:
		return s
	if s.valid_len > ctx.n:
		raise DimensionError(Message.SLOT_OVERFLOW.value)
	counts = np.bincount([part for part, _ in s.positions()], minlength=len(s.parts))
	acc = None
	for r, (part, slot) in enumerate(s.positions()):
		x = s.parts[part]
		if counts[part] > 1:
			x = ctx.mult_plain(x, ctx.one_hot([slot]))
		if slot != r:
			x = ctx.rotate(x, slot - r)
		acc = x if acc is None else ctx.add(acc, x)
	return ScoreVector(parts=[acc], valid_len=s.valid_len, layout=ScoreLayout.PREFILL_ALIGNED.value)


def arcc_inner_inner_blocks(weights, rows: PackedMatrix, ctx: Context) -> SlotCiphertext:
	"""
	Σ_r w_r·rows[r] для строк в InnerCompacted. weights[c] содержит веса строк части c,
	размноженные по их блокам. Одно умножение на шифротекст кэша, затем свёртка блоков.
	"""
	if rows.kind != EncodingKind.INNER_COMPACTED.value or len(weights) != len(rows.parts):
		raise DimensionError(Message.SHAPE_MISMATCH.value)
	acc = None
	for coeff, part in zip(weights, rows.parts):
		product = ctx.mult_cipher(coeff, part)
		acc = product if acc is None else ctx.add(acc, product)
	acc = fold_blocks(acc, rows.encoding.block_width, rows.encoding.block_size, ctx)
	return ctx.mult_plain(acc, ctx.mask(0, rows.cols))


def attention_scale(head_dim: int, fp: FixedPointParams) -> int:
	return int(round(fp.scale / np.sqrt(head_dim)))


def prefill_attention(
	Q: PackedMatrix, K: PackedMatrix, V: PackedMatrix, fp: FixedPointParams, ctx: Context, ch: MpcChannel,
	causal: bool = True
) -> PackedMatrix:
	"""
	Внимание префикса: все матрицы в Outer (m×d2), результат в Outer в масштабе f.
	Столбец i матрицы оценок равен Σ_j Q[:, j]·K[i, j], то есть 2·m·d2 умножений шифротекстов.
	"""
	m, d = Q.rows, Q.cols
	with ctx.track(Component.CTCT.value):
		columns = []
		for i in range(m):
			acc = None
			for j in range(d):
				product = ctx.mult_cipher(Q.parts[j], broadcast_slot(K.parts[j], i, ctx.n, ctx))
				acc = product if acc is None else ctx.add(acc, product)
			columns.append(acc)

	with ctx.track(Component.NONLINEAR.value):
		positions = np.arange(m)
		scores = SharePair.stack([he_to_shares(column, ctx, ch, positions) for column in columns], axis=1)
		scores = mpc_scale(mpc_truncate(scores, fp, ch), attention_scale(d, fp), fp, ch)
		mask = np.tril(np.ones((m, m), dtype=bool)) if causal else None
		weights = mpc_softmax(scores, fp, ch, mask=mask)
		weight_columns = [shares_to_he(weights[:, i], ctx, ch) for i in range(m)]

	with ctx.track(Component.CTCT.value):
		outputs = []
		for j in range(d):
			acc = None
			for i in range(m):
				product = ctx.mult_cipher(weight_columns[i], broadcast_slot(V.parts[j], i, ctx.n, ctx))
				acc = product if acc is None else ctx.add(acc, product)
			outputs.append(acc)

	with ctx.track(Component.NONLINEAR.value):
		parts = [rescale(ct, m, fp, ctx, ch) for ct in outputs]
	return PackedMatrix(encoding=Q.encoding, parts=parts, encrypted=True)


def _expand_weights(weights: SharePair, cache: KVCache, ctx: Context, ch: MpcChannel):
	"""Вес токена r размножается по блоку r шифротекста автосегмента"""
	block, d = cache.block, cache.head_dim
	expanded = []
	for part in range(len(cache.auto_k)):
		index_map = np.full(ctx.n, -1, dtype=np.int64)
		rows = cache.auto_v.encoding.rows_in_part(part)
		for b in range(rows):
			index_map[b * d:(b + 1) * d] = part * block + b
		expanded.append(shares_to_he(weights.scatter(index_map, ctx.n), ctx, ch))
	return expanded


def attention_step(
	q: SlotCiphertext, cache: KVCache, fp: FixedPointParams, ctx: Context, ch: MpcChannel
) -> SlotCiphertext:
	"""
	Внимание одного токена над кэшем. Оценки префикса через arcc_inner_inner,
	оценки генерации через arcc_inner_outer; softmax в долях; взвешенная сумма
	значений собирается из обоих сегментов. Результат в слотах 0..d2-1, масштаб f.
	Число умножений шифротекстов 2·d2 + 2·⌈t/B⌉ и не зависит от длины префикса.
	"""
	m, t, d = cache.prefill_len, cache.t_auto, cache.head_dim
	with ctx.track(Component.CTCT.value):
		pieces = []
		if m:
			pieces.append(arcc_inner_inner(q, cache.prefill_k, ctx))
		if t:
			pieces.append(arcc_inner_outer(q, cache.auto_k, ctx))

	with ctx.track(Component.NONLINEAR.value):
		gathered = []
		for score in pieces:
			positions = score.positions()
			for index, ct in enumerate(score.parts):
				slots = [slot for part, slot in positions if part == index]
				gathered.append(he_to_shares(ct, ctx, ch, positions=slots))
		scores = SharePair.concatenate(gathered, axis=0)
		scores = mpc_scale(mpc_truncate(scores, fp, ch), attention_scale(d, fp), fp, ch)
		weights = mpc_softmax(scores, fp, ch)
		pre_weights = shares_to_he(weights[:m], ctx, ch) if m else None
		auto_weights = _expand_weights(weights[m:], cache, ctx, ch) if t else None

	with ctx.track(Component.CTCT.value):
		outputs = []
		if m:
			values = arcc_inner_outer(pre_weights, transpose_view(cache.prefill_v), ctx, width=ctx.n)
			outputs.append(compact_scores(values, ctx).ct)
		if t:
			outputs.append(arcc_inner_inner_blocks(auto_weights, cache.auto_v, ctx))
		output = ctx.sum(outputs)

	with ctx.track(Component.NONLINEAR.value):
		result = rescale(output, d, fp, ctx, ch)
	logger.debug('attention_step m=%s t=%s', m, t)
	return result
