import numpy as np
import pytest

from cryptogen.src.entity.constants import EncodingKind, Message
from cryptogen.src.entity.encodings import (
	SlotLayout,
	block_capacity,
	decode,
	encode,
	make_encoding,
	pack_token_inner,
	tile_token,
	transpose_view,
)
from cryptogen.src.entity.errors import DimensionError, ParameterError


@pytest.mark.parametrize('kind,shape', [
	(EncodingKind.OUTER.value, (5, 7)),
	(EncodingKind.INNER.value, (6, 20)),
	(EncodingKind.DIAGONAL.value, (12, 8)),
	(EncodingKind.INNER_COMPACTED.value, (19, 8)),
])
def test_decode_inverts_encode(ctx, rng, kind, shape):
	A = rng.integers(-500, 500, size=shape)
	for encrypted in (False, True):
		P = encode(A, kind, ctx, encrypted=encrypted)
		assert np.array_equal(decode(P, ctx), np.mod(A, ctx.p))


def test_part_counts(ctx):
	assert encode(np.ones((5, 7)), EncodingKind.OUTER.value, ctx).encoding.n_parts == 7
	assert encode(np.ones((5, 7)), EncodingKind.INNER.value, ctx).encoding.n_parts == 5
	assert encode(np.ones((12, 8)), EncodingKind.DIAGONAL.value, ctx).encoding.n_parts == 8
	# B = 64 / 8 = 8 строк на шифротекст
	assert encode(np.ones((17, 8)), EncodingKind.INNER_COMPACTED.value, ctx).encoding.n_parts == 3


def test_diagonal_layout(ctx):
	A = np.arange(16).reshape(4, 4)
	P = encode(A, EncodingKind.DIAGONAL.value, ctx)
	for k in range(4):
		for i in range(4):
			assert P.parts[k].slots[i] == A[i, (i + k) % 4]


def test_inner_compacted_layout(ctx):
	A = np.arange(10 * 8).reshape(10, 8) + 1
	P = encode(A, EncodingKind.INNER_COMPACTED.value, ctx)
	assert P.encoding.block_size == block_capacity(ctx.n, 8) == 8
	assert np.array_equal(P.parts[1].slots[8:16], A[9])
	assert not P.parts[1].slots[16:].any()


def test_block_capacity_rounds_up():
	assert block_capacity(8192, 64) == 128
	assert block_capacity(64, 8) == 8
	assert block_capacity(64, 12) == 6


def test_slot_overflow(ctx):
	with pytest.raises(DimensionError):
		encode(np.ones((ctx.n + 1, 2)), EncodingKind.OUTER.value, ctx)
	with pytest.raises(DimensionError):
		encode(np.ones((2, ctx.n + 1)), EncodingKind.INNER.value, ctx)


def test_unknown_encoding(ctx):
	with pytest.raises(ParameterError, match=Message.UNKNOWN_ENCODING.value):
		make_encoding('spiral', 2, 2, ctx.n)
	with pytest.raises(ParameterError):
		encode(np.ones((2, 2)), 'spiral', ctx)
	with pytest.raises(ParameterError):
		SlotLayout.get('spiral')


def test_transpose_view_is_free(ctx, rng):
	A = rng.integers(0, 100, size=(6, 3))
	P = encode(A, EncodingKind.OUTER.value, ctx, encrypted=True)
	before = ctx.snapshot()
	view = transpose_view(P)
	assert ctx.snapshot() == before
	assert view.kind == EncodingKind.INNER.value
	assert np.array_equal(decode(view, ctx), A.T)


def test_pack_and_tile_token(ctx):
	x = np.arange(1, 9)
	ct = pack_token_inner(x, ctx)
	tiled = ctx.decrypt(tile_token(ct, 8, 8, ctx)).slots
	assert np.array_equal(tiled, np.tile(x, 8))
	before = ctx.counter.rotate
	partial = ctx.decrypt(tile_token(ct, 8, 5, ctx)).slots
	assert ctx.counter.rotate - before == 3
	assert np.array_equal(partial[:40], np.tile(x, 5))
	assert not partial[40:].any()
