"""
Умножения шифротекста на открытую матрицу весов.

CPMM (предзаполнение): вход X в упаковке Outer, веса в Diagonal.
Столбцы X собираются по g = n/m' в один шифротекст (m' = m до степени двойки),
каждый шифротекст умножается на R = min(g, d2') диагоналей блоков, частичные
суммы сдвигаются на k блоков и сворачиваются. Число умножений C·R·O,
C = ⌈d1/g⌉, O = ⌈d2/R⌉; при m=128, d1=768, d2=64, n=8192 это 768.

CPVM (генерация): вход x в упаковке Inner, d2' диагоналей и одна маска,
число умножений не зависит от длины запроса.
"""
import logging

import numpy as np

from cryptogen.src.entity.backend import Context, SlotCiphertext, ceil_log2, is_power_of_two, next_power_of_two
from cryptogen.src.entity.constants import EncodingKind, Message
from cryptogen.src.entity.encodings import Encoding, PackedMatrix, encode, part_slots
from cryptogen.src.entity.errors import DimensionError

logger = logging.getLogger(__name__)


def fold_blocks(ct: SlotCiphertext, stride: int, count: int, ctx: Context) -> SlotCiphertext:
	"""Складывает count блоков с шагом stride в первый: x += rotate(x, stride·2^i)"""
	if not is_power_of_two(count):
		raise DimensionError(Message.NOT_POWER_OF_TWO.value)
	for i in range(ceil_log2(count)):
		ct = ctx.add(ct, ctx.rotate(ct, stride << i))
	return ct


def fold_sum(a: SlotCiphertext, block: int, ctx: Context) -> SlotCiphertext:
	"""Сумма каждого блока ширины block оказывается в его первом слоте; log2(block) поворотов"""
	if not is_power_of_two(block) or ctx.n % block:
		raise DimensionError(Message.NOT_POWER_OF_TWO.value)
	return fold_blocks(a, 1, block, ctx)


def weight_entries(W: PackedMatrix, ctx: Context) -> np.ndarray:
	"""Элементы W по диагональной упаковке: W[i, j] = parts[(j - i) mod d2][i]"""
	if W.kind != EncodingKind.DIAGONAL.value or W.encrypted:
		raise DimensionError(Message.PLAIN_WEIGHTS.value)
	diagonals = part_slots(W, ctx)
	i = np.arange(W.rows)[:, None]
	j = np.arange(W.cols)[None, :]
	return diagonals[(j - i) % W.cols, i]


def _pack_columns(columns, width: int, ctx: Context) -> SlotCiphertext:
	packed = columns[0]
	for b, column in enumerate(columns[1:], start=1):
		packed = ctx.add(packed, ctx.rotate(column, -b * width))
	return packed


def cpmm_outer_diagonal(X: PackedMatrix, W: PackedMatrix, ctx: Context) -> PackedMatrix:
	"""
	Y = X·W для X (m×d1) в Outer и W (d1×d2) в Diagonal.
	Результат в Outer с R столбцами на шифротекст, блоками по m' слотов.
	"""
	if X.kind != EncodingKind.OUTER.value or X.encoding.block_size != 1 or not X.encrypted:
		raise DimensionError(Message.NOT_ENCRYPTED.value)
	m, d1, d2 = X.rows, X.cols, W.cols
	if W.rows != d1:
		raise DimensionError(f'{Message.SHAPE_MISMATCH.value}: {m}x{d1} · {W.rows}x{d2}')
	width = next_power_of_two(m)
	if width > ctx.n:
		raise DimensionError(Message.SLOT_OVERFLOW.value)
	groups = ctx.n // width
	reps = min(groups, next_power_of_two(d2))
	outputs = -(-d2 // reps)
	chunks = -(-d1 // groups)

	weights = np.zeros((chunks * groups, outputs * reps), dtype=np.int64)
	weights[:d1, :d2] = weight_entries(W, ctx)
	packed = [_pack_columns(X.parts[c * groups:(c + 1) * groups], width, ctx) for c in range(chunks)]
	rows = np.zeros(width, dtype=np.int64)
	rows[:m] = 1
	block = np.arange(groups)

	parts = []
	for o in range(outputs):
		acc = None
		for c in range(chunks):
			for k in range(reps):
				coeff = weights[c * groups + block, o * reps + (block + k) % reps]
				product = ctx.mult_plain(packed[c], ctx.plain(np.outer(coeff, rows).ravel()))
				if k:
					product = ctx.rotate(product, -k * width)
				acc = product if acc is None else ctx.add(acc, product)
		parts.append(fold_blocks(acc, reps * width, groups // reps, ctx))
	logger.debug('cpmm m=%s d1=%s d2=%s: chunks=%s reps=%s outputs=%s', m, d1, d2, chunks, reps, outputs)
	encoding = Encoding(kind=EncodingKind.OUTER.value, rows=m, cols=d2, block_size=reps, block_width=width)
	return PackedMatrix(encoding=encoding, parts=parts, encrypted=True)


def cpvm_inner_diagonal(x: SlotCiphertext, W: PackedMatrix, ctx: Context) -> SlotCiphertext:
	"""y = x·W для x в слотах 0..d1-1; y в слотах 0..d2-1, остальные слоты нулевые"""
	d1, d2 = W.rows, W.cols
	width = next_power_of_two(d2)
	if d1 > ctx.n or width > ctx.n:
		raise DimensionError(Message.SLOT_OVERFLOW.value)
	weights = np.zeros((d1, width), dtype=np.int64)
	weights[:, :d2] = weight_entries(W, ctx)
	i = np.arange(d1)

	acc = None
	for k in range(width):
		product = ctx.mult_plain(x, ctx.plain(weights[i, (i + k) % width]))
		if k:
			product = ctx.rotate(product, -k)
		acc = product if acc is None else ctx.add(acc, product)
	blocks = -(-(d1 + width - 1) // width)
	steps = min(ceil_log2(blocks), ceil_log2(ctx.n // width))
	acc = fold_blocks(acc, width, 1 << steps, ctx)
	return ctx.mult_plain(acc, ctx.mask(0, d2))


def add_bias_outer(Y: PackedMatrix, bias, ctx: Context) -> PackedMatrix:
	"""Прибавляет вектор смещения к каждой строке матрицы в упаковке Outer"""
	bias = np.asarray(bias, dtype=np.int64)
	if bias.shape != (Y.cols,):
		raise DimensionError(Message.SHAPE_MISMATCH.value)
	plain = encode(
		np.tile(bias, (Y.rows, 1)), EncodingKind.OUTER.value, ctx,
		block_size=Y.encoding.block_size, block_width=Y.encoding.block_width
	)
	parts = [ctx.add_plain(part, vector) for part, vector in zip(Y.parts, plain.parts)]
	return PackedMatrix(encoding=Y.encoding, parts=parts, encrypted=True)


def add_bias_inner(y: SlotCiphertext, bias, ctx: Context) -> SlotCiphertext:
	return ctx.add_plain(y, ctx.plain(bias))
