import numpy as np
import pytest

from cryptogen.src.entity.backend import BackendParams, new_context
from cryptogen.src.entity.constants import EncodingKind
from cryptogen.src.entity.encodings import decode, encode, pack_token_inner
from cryptogen.src.entity.errors import DimensionError
from cryptogen.src.services.costmodel import cpmm_mult, cpvm_mult
from cryptogen.src.services.linear_kernels import (
	add_bias_inner,
	add_bias_outer,
	cpmm_outer_diagonal,
	cpvm_inner_diagonal,
	fold_sum,
)


def _cpmm(ctx, X, W):
	Xp = encode(X, EncodingKind.OUTER.value, ctx, encrypted=True)
	Wp = encode(W, EncodingKind.DIAGONAL.value, ctx)
	return cpmm_outer_diagonal(Xp, Wp, ctx)


def test_cpmm_random_instances(ctx, rng):
	for _ in range(200):
		m, d1, d2 = (int(value) for value in rng.integers(1, 17, size=3))
		X = rng.integers(-50, 50, size=(m, d1))
		W = rng.integers(-50, 50, size=(d1, d2))
		Y = _cpmm(ctx, X, W)
		assert np.array_equal(decode(Y, ctx), np.mod(X @ W, ctx.p))


def test_cpvm_random_instances(ctx, rng):
	for _ in range(200):
		d1, d2 = (int(value) for value in rng.integers(1, 17, size=2))
		x = rng.integers(-50, 50, size=d1)
		W = rng.integers(-50, 50, size=(d1, d2))
		y = cpvm_inner_diagonal(pack_token_inner(x, ctx), encode(W, EncodingKind.DIAGONAL.value, ctx), ctx)
		slots = ctx.decrypt(y).slots
		assert np.array_equal(slots[:d2], np.mod(x @ W, ctx.p))
		assert not slots[d2:].any()


def test_cpmm_count_law(ctx, rng):
	m, d1, d2 = 8, 32, 8
	before = ctx.snapshot()
	_cpmm(ctx, rng.integers(0, 9, size=(m, d1)), rng.integers(0, 9, size=(d1, d2)))
	assert (ctx.snapshot() - before).mult_plain == cpmm_mult(m, d1, d2, ctx.n)


def test_cpvm_count_independent_of_prompt(ctx, rng):
	W = encode(rng.integers(0, 9, size=(32, 8)), EncodingKind.DIAGONAL.value, ctx)
	before = ctx.snapshot()
	cpvm_inner_diagonal(pack_token_inner(rng.integers(0, 9, size=32), ctx), W, ctx)
	assert (ctx.snapshot() - before).mult_plain == cpvm_mult(8) == 9


@pytest.mark.slow
def test_cpmm_reference_dims():
	ctx = new_context(BackendParams(n_slots=8192))
	rng = np.random.default_rng(0)
	X = rng.integers(-4, 4, size=(128, 768))
	W = rng.integers(-4, 4, size=(768, 64))
	Xp = encode(X, EncodingKind.OUTER.value, ctx, encrypted=True)
	Wp = encode(W, EncodingKind.DIAGONAL.value, ctx)
	before = ctx.snapshot()
	Y = cpmm_outer_diagonal(Xp, Wp, ctx)
	assert (ctx.snapshot() - before).mult_plain == 768
	assert len(Y.parts) == 1
	assert np.array_equal(decode(Y, ctx), np.mod(X @ W, ctx.p))


def test_cpmm_shape_mismatch(ctx):
	Xp = encode(np.ones((4, 6)), EncodingKind.OUTER.value, ctx, encrypted=True)
	Wp = encode(np.ones((5, 3)), EncodingKind.DIAGONAL.value, ctx)
	with pytest.raises(DimensionError):
		cpmm_outer_diagonal(Xp, Wp, ctx)
	plain = encode(np.ones((4, 6)), EncodingKind.OUTER.value, ctx)
	with pytest.raises(DimensionError):
		cpmm_outer_diagonal(plain, encode(np.ones((6, 3)), EncodingKind.DIAGONAL.value, ctx), ctx)


def test_biases(ctx, rng):
	X = rng.integers(-20, 20, size=(5, 12))
	W = rng.integers(-20, 20, size=(12, 6))
	b = rng.integers(-20, 20, size=6)
	Y = add_bias_outer(_cpmm(ctx, X, W), b, ctx)
	assert np.array_equal(decode(Y, ctx), np.mod(X @ W + b, ctx.p))
	y = add_bias_inner(pack_token_inner(X[0], ctx), np.arange(12), ctx)
	assert np.array_equal(ctx.decrypt(y).slots[:12], np.mod(X[0] + np.arange(12), ctx.p))


def test_fold_sum(ctx):
	ct = ctx.encrypt(np.arange(ctx.n))
	before = ctx.counter.rotate
	folded = ctx.decrypt(fold_sum(ct, 8, ctx)).slots
	assert ctx.counter.rotate - before == 3
	for block in range(ctx.n // 8):
		assert folded[block * 8] == sum(range(block * 8, block * 8 + 8))
	with pytest.raises(DimensionError):
		fold_sum(ct, 6, ctx)
