"""
Упаковки матриц в векторы слотов.

Outer          часть j хранит столбец j (или несколько столбцов блоками по block_width слотов)
Inner          часть i хранит строку i
Diagonal       часть k хранит обёрнутую диагональ: parts[k][i] = A[i, (i + k) mod d]
InnerCompacted часть c хранит строки c·B .. c·B + B - 1 подряд, по d слотов на строку
"""
import logging

import numpy as np

from cryptogen.src.entity.backend import (
	Context,
	PlainVector,
	SlotCiphertext,
	ceil_log2,
	is_power_of_two,
)
from cryptogen.src.entity.constants import EncodingKind, Message
from cryptogen.src.entity.errors import DimensionError, ParameterError

logger = logging.getLogger(__name__)


def block_capacity(n_slots: int, width: int) -> int:
	"""Сколько строк ширины width помещается в один шифротекст: B = ⌈n/d⌉"""
	return -(-n_slots // width)


class Encoding:
	def __init__(self, *, kind: str, rows: int, cols: int, block_size: int = 1, block_width: int = None):
		if kind not in EncodingKind.values:
			raise ParameterError(Message.UNKNOWN_ENCODING.value)
		self.kind = kind
		self.rows = int(rows)
		self.cols = int(cols)
		self.block_size = int(block_size)
		if block_width is None:
			block_width = self.cols if kind == EncodingKind.INNER_COMPACTED.value else self.rows
		self.block_width = int(block_width)

	@property
	def n_parts(self) -> int:
		if self.kind == EncodingKind.OUTER.value:
			return -(-self.cols // self.block_size)
		if self.kind == EncodingKind.INNER.value:
			return self.rows
		if self.kind == EncodingKind.DIAGONAL.value:
			return self.cols
		return -(-self.rows // self.block_size)

	def rows_in_part(self, part: int) -> int:
		"""Число строк InnerCompacted, лежащих в части part"""
		return max(0, min(self.block_size, self.rows - part * self.block_size))

	def __eq__(self, other):
		if type(other) == self.__class__:
			return self.as_dict() == other.as_dict()
		return NotImplemented

	def __hash__(self):
		return hash(tuple(self.as_dict().values()))

	def as_dict(self) -> dict:
		return {
			'kind': self.kind,
			'rows': self.rows,
			'cols': self.cols,
			'block_size': self.block_size,
			'block_width': self.block_width,
		}

	def __repr__(self):
		return f'Encoding({self.kind}, {self.rows}x{self.cols}, B={self.block_size})'


class PackedMatrix:
	"""Матрица, разложенная по частям-векторам слотов"""

	def __init__(self, *, encoding: Encoding, parts, encrypted: bool):
		self.encoding = encoding
		self.parts = list(parts)
		self.encrypted = encrypted

	@property
	def rows(self) -> int:
		return self.encoding.rows

	@property
	def cols(self) -> int:
		return self.encoding.cols

	@property
	def kind(self) -> str:
		return self.encoding.kind

	def __iter__(self):
		return (part for part in self.parts)

	def __len__(self):
		return len(self.parts)

	def __getitem__(self, index):
		return self.parts[index]


class SlotLayout:
	"""
	Раскладка элементов матрицы по (часть, слот). Единая для encode и decode,
	поэтому decode(encode(A)) = A по построению.
	"""
	layouts = {}

	@classmethod
	def register(cls, kind):
		def wrapper(layout):
			cls.layouts[kind] = layout
			return layout
		return wrapper

	@classmethod
	def get(cls, kind):
		try:
			return cls.layouts[kind]
		except KeyError:
			raise ParameterError(Message.UNKNOWN_ENCODING.value)


@SlotLayout.register(EncodingKind.OUTER.value)
def _outer_layout(encoding: Encoding):
	i, j = np.indices((encoding.rows, encoding.cols))
	return j // encoding.block_size, (j % encoding.block_size) * encoding.block_width + i, i, j


@SlotLayout.register(EncodingKind.INNER.value)
def _inner_layout(encoding: Encoding):
	i, j = np.indices((encoding.rows, encoding.cols))
	return i, j, i, j


@SlotLayout.register(EncodingKind.DIAGONAL.value)
def _diagonal_layout(encoding: Encoding):
	i, k = np.indices((encoding.rows, encoding.cols))
	return k, i, i, (i + k) % encoding.cols


@SlotLayout.register(EncodingKind.INNER_COMPACTED.value)
def _inner_compacted_layout(encoding: Encoding):
	i, j = np.indices((encoding.rows, encoding.cols))
	return i // encoding.block_size, (i % encoding.block_size) * encoding.block_width + j, i, j


def _check_fits(encoding: Encoding, n_slots: int):
	kind = encoding.kind
	if kind == EncodingKind.OUTER.value:
		span = (encoding.block_size - 1) * encoding.block_width + encoding.rows
		if encoding.block_size > 1 and encoding.block_width < encoding.rows:
			raise DimensionError(Message.SHAPE_MISMATCH.value)
	elif kind == EncodingKind.DIAGONAL.value:
		span = max(encoding.rows, encoding.cols)
	elif kind == EncodingKind.INNER_COMPACTED.value:
		span = encoding.block_size * encoding.block_width
		if encoding.block_width < encoding.cols:
			raise DimensionError(Message.SHAPE_MISMATCH.value)
	else:
		span = encoding.cols
	if span > n_slots:
		raise DimensionError(Message.SLOT_OVERFLOW.value)


def make_encoding(kind: str, rows: int, cols: int, n_slots: int, block_size: int = None, block_width: int = None):
	if kind == EncodingKind.INNER_COMPACTED.value and block_size is None:
		block_size = block_capacity(n_slots, cols)
	encoding = Encoding(kind=kind, rows=rows, cols=cols, block_size=block_size or 1, block_width=block_width)
	_check_fits(encoding, n_slots)
	return encoding


def encode(
	matrix, kind: str, ctx: Context, *, encrypted: bool = False, block_size: int = None, block_width: int = None
) -> PackedMatrix:
	"""Раскладывает матрицу (значения в Z_p или со знаком) по частям выбранной упаковки"""
	matrix = np.mod(np.atleast_2d(np.asarray(matrix, dtype=np.int64)), ctx.p)
	rows, cols = matrix.shape
	encoding = make_encoding(kind, rows, cols, ctx.n, block_size=block_size, block_width=block_width)
	slots = np.zeros((encoding.n_parts, ctx.n), dtype=np.int64)
	part, slot, i, j = SlotLayout.get(kind)(encoding)
	slots[part, slot] = matrix[i, j]
	if encrypted:
		parts = [ctx.encrypt(PlainVector(row)) for row in slots]
	else:
		parts = [PlainVector(row) for row in slots]
	return PackedMatrix(encoding=encoding, parts=parts, encrypted=encrypted)


def part_slots(P: PackedMatrix, ctx: Context) -> np.ndarray:
	if P.encrypted:
		return np.stack([ctx.decrypt(part).slots for part in P.parts])
	return np.stack([part.slots for part in P.parts])


def decode(P: PackedMatrix, ctx: Context) -> np.ndarray:
	"""Обратная операция к encode; значения в Z_p"""
	slots = part_slots(P, ctx)
	encoding = P.encoding
	part, slot, i, j = SlotLayout.get(encoding.kind)(encoding)
	matrix = np.zeros((encoding.rows, encoding.cols), dtype=np.int64)
	matrix[i, j] = slots[part, slot]
	return matrix


def transpose_view(P: PackedMatrix) -> PackedMatrix:
	"""
	Outer(A) и Inner(Aᵀ) состоят из одних и тех же векторов,
	поэтому смена интерпретации не требует операций схемы.
	"""
	encoding = P.encoding
	if encoding.kind == EncodingKind.OUTER.value and encoding.block_size == 1:
		kind = EncodingKind.INNER.value
	elif encoding.kind == EncodingKind.INNER.value:
		kind = EncodingKind.OUTER.value
	else:
		raise DimensionError(Message.SHAPE_MISMATCH.value)
	view = Encoding(kind=kind, rows=encoding.cols, cols=encoding.rows)
	return PackedMatrix(encoding=view, parts=P.parts, encrypted=P.encrypted)


def pack_token_inner(x, ctx: Context) -> SlotCiphertext:
	"""Шифрует вектор токена в слоты 0..d-1"""
	return ctx.encrypt(ctx.plain(x))


def tile_token(x: SlotCiphertext, d: int, B: int, ctx: Context) -> SlotCiphertext:
	"""
	Размножает вектор из слотов 0..d-1 в B блоков по d слотов удвоением:
	x += rotate(x, -d·2^i), ⌈log2 B⌉ поворотов. Если B не степень двойки,
	лишние копии обнуляются маской.
	"""
	steps = ceil_log2(B)
	if (1 << steps) * d > ctx.n:
		raise DimensionError(Message.SLOT_OVERFLOW.value)
	tiled = x
	for i in range(steps):
		tiled = ctx.add(tiled, ctx.rotate(tiled, -d * (1 << i)))
	if not is_power_of_two(B):
		tiled = ctx.mult_plain(tiled, ctx.mask(0, B * d))
	logger.debug('tile_token d=%s B=%s rotations=%s', d, B, steps)
	return tiled
