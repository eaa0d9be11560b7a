import numpy as np
import pytest

from cryptogen.src.entity import fixed_point
from cryptogen.src.entity.constants import EncodingKind, ScoreLayout
from cryptogen.src.entity.encodings import decode, encode, pack_token_inner
from cryptogen.src.entity.errors import DimensionError
from cryptogen.src.services.arcc import (
	arcc_inner_inner,
	arcc_inner_inner_blocks,
	arcc_inner_outer,
	attention_scale,
	attention_step,
	broadcast_slot,
	compact_scores,
	prefill_attention,
)
from cryptogen.src.services.kv_cache import append_token, init_cache


def test_broadcast_slot(ctx):
	ct = ctx.encrypt(np.arange(ctx.n) + 10)
	slots = ctx.decrypt(broadcast_slot(ct, 5, 16, ctx)).slots
	assert (slots[:16] == 15).all()


def test_inner_inner_random_instances(ctx, rng):
	for _ in range(200):
		L, R = (int(value) for value in rng.integers(1, 17, size=2))
		coeffs = rng.integers(-30, 30, size=L)
		basis = rng.integers(-30, 30, size=(R, L))
		score = arcc_inner_inner(
			pack_token_inner(coeffs, ctx), encode(basis, EncodingKind.OUTER.value, ctx, encrypted=True), ctx
		)
		assert score.layout == ScoreLayout.PREFILL_ALIGNED.value
		assert np.array_equal(score.decode(ctx), np.mod(basis @ coeffs, ctx.p))


def test_inner_outer_random_instances(ctx, rng):
	for _ in range(200):
		t, d = (int(value) for value in rng.integers(1, 17, size=2))
		v = rng.integers(-30, 30, size=d)
		K = rng.integers(-30, 30, size=(t, d))
		kind = EncodingKind.INNER_COMPACTED.value if d in (1, 2, 4, 8, 16) else EncodingKind.INNER.value
		rows = encode(K, kind, ctx, encrypted=True)
		score = arcc_inner_outer(pack_token_inner(v, ctx), rows, ctx)
		assert score.layout == ScoreLayout.BLOCK_ALIGNED.value
		assert np.array_equal(score.decode(ctx), np.mod(K @ v, ctx.p))
		assert np.array_equal(compact_scores(score, ctx).decode(ctx), np.mod(K @ v, ctx.p))


def test_inner_outer_rotations_do_not_grow_with_rows(ctx, rng):
	v = pack_token_inner(rng.integers(0, 9, size=8), ctx)
	rotations = []
	for t in (8, 16, 24):
		rows = encode(rng.integers(0, 9, size=(t, 8)), EncodingKind.INNER_COMPACTED.value, ctx, encrypted=True)
		before = ctx.snapshot()
		arcc_inner_outer(v, rows, ctx)
		delta = ctx.snapshot() - before
		assert delta.mult_cipher == t // 8
		rotations.append(delta.rotate / (t // 8))
	assert rotations[0] >= rotations[1] >= rotations[2]


def test_inner_outer_rejects_outer(ctx):
	v = pack_token_inner([1, 2], ctx)
	with pytest.raises(DimensionError):
		arcc_inner_outer(v, encode(np.ones((2, 2)), EncodingKind.OUTER.value, ctx, encrypted=True), ctx)


def test_inner_inner_blocks(ctx, rng):
	rows = rng.integers(-20, 20, size=(11, 8))
	weights = rng.integers(-20, 20, size=11)
	packed = encode(rows, EncodingKind.INNER_COMPACTED.value, ctx, encrypted=True)
	expanded = []
	for part in range(len(packed.parts)):
		slots = np.zeros(ctx.n, dtype=np.int64)
		for b in range(packed.encoding.rows_in_part(part)):
			slots[b * 8:(b + 1) * 8] = weights[part * 8 + b]
		expanded.append(ctx.encrypt(ctx.plain(slots)))
	result = ctx.decrypt(arcc_inner_inner_blocks(expanded, packed, ctx)).slots
	assert np.array_equal(result[:8], np.mod(weights @ rows, ctx.p))
	assert not result[8:].any()


def _plain_attention(q, K, V, fp):
	scores = fixed_point.truncate(fp.wrap(K @ q), fp)
	scores = fixed_point.truncate(fp.wrap(scores * attention_scale(len(q), fp)), fp)
	weights = fp.wrap(fixed_point.softmax(scores, fp))
	return fixed_point.truncate(fp.wrap(weights @ V), fp)


def test_prefill_attention_matches_fixed_point(ctx, channel, fp, rng):
	m, d = 6, 8
	Q, K, V = (rng.integers(-2048, 2048, size=(m, d)) for _ in range(3))
	packed = [encode(A, EncodingKind.OUTER.value, ctx, encrypted=True) for A in (Q, K, V)]
	before = ctx.snapshot()
	out = prefill_attention(*packed, fp, ctx, channel)
	assert (ctx.snapshot() - before).mult_cipher == 2 * m * d
	result = fp.to_signed(decode(out, ctx))
	for i in range(m):
		assert np.array_equal(result[i], _plain_attention(Q[i], K[:i + 1], V[:i + 1], fp))


def test_attention_step_over_heterogeneous_cache(ctx, channel, fp, rng):
	m, d, steps = 5, 8, 11
	K, V = (rng.integers(-2048, 2048, size=(m + steps, d)) for _ in range(2))
	cache = init_cache(
		encode(K[:m], EncodingKind.OUTER.value, ctx, encrypted=True),
		encode(V[:m], EncodingKind.OUTER.value, ctx, encrypted=True),
		ctx,
	)
	for t in range(steps):
		cache = append_token(cache, pack_token_inner(K[m + t], ctx), pack_token_inner(V[m + t], ctx), ctx)
		q = rng.integers(-2048, 2048, size=d)
		before = ctx.snapshot()
		out = attention_step(pack_token_inner(q, ctx), cache, fp, ctx, channel)
		delta = ctx.snapshot() - before
		assert delta.mult_cipher == 2 * d + 2 * -(-(t + 1) // cache.block)
		slots = fp.to_signed(ctx.decrypt(out).slots)
		assert np.array_equal(slots[:d], _plain_attention(q, K[:m + t + 1], V[:m + t + 1], fp))
		assert not slots[d:].any()


def test_attention_step_without_prefix(ctx, channel, fp, rng):
	d = 8
	cache = init_cache(None, None, ctx, head_dim=d)
	K, V = (rng.integers(-2048, 2048, size=(3, d)) for _ in range(2))
	for t in range(3):
		cache = append_token(cache, pack_token_inner(K[t], ctx), pack_token_inner(V[t], ctx), ctx)
	q = rng.integers(-2048, 2048, size=d)
	out = fp.to_signed(ctx.decrypt(attention_step(pack_token_inner(q, ctx), cache, fp, ctx, channel)).slots)
	assert np.array_equal(out[:d], _plain_attention(q, K, V, fp))
