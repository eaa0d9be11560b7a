"""
Гетерогенный KV-кэш одной головы.

Префикс запроса хранится в Outer (по шифротексту на столбец), токены генерации
дописываются в InnerCompacted: B = ⌈n/d2⌉ векторов на шифротекст. Обновление
шума ленивое: шифротекст перешифровывается клиентом только когда бюджет
опустился до порога.
"""
import json
import logging
import os

import numpy as np

from cryptogen.src.entity.backend import Context, SlotCiphertext
from cryptogen.src.entity.constants import CacheSegment, CounterField, Direction, EncodingKind, Message
from cryptogen.src.entity.encodings import Encoding, PackedMatrix, make_encoding
from cryptogen.src.entity.errors import DimensionError, SchemaError
from cryptogen.src.entity.matrix_io import read_matrix, write_matrix
from cryptogen.src.services.nonlinear import MpcChannel
from cryptogen.src.services.serializers import CacheManifestSerializer

logger = logging.getLogger(__name__)

MANIFEST = 'manifest.json'


class RefreshEvent:
	def __init__(
		self, *, step: int, segment: str, part_id: int, budget_before: int, mpc_bytes: int, forced: bool = False
	):
		self.step = step
		self.segment = segment
		self.part_id = part_id
		self.budget_before = budget_before
		self.mpc_bytes = mpc_bytes
		# forced: обновление вне порога (budget_before может быть выше порога)
		self.forced = bool(forced)

	def as_dict(self) -> dict:
		return dict(vars(self))

	def __eq__(self, other):
		if type(other) == self.__class__:
			return vars(self) == vars(other)
		return NotImplemented

	def __repr__(self):
		suffix = ', forced' if self.forced else ''
		return f'RefreshEvent(step={self.step}, {self.segment}[{self.part_id}], budget={self.budget_before}{suffix})'


class KVCache:
	def __init__(
		self, *, head_dim: int, block: int, auto_k: PackedMatrix, auto_v: PackedMatrix,
		prefill_k: PackedMatrix = None, prefill_v: PackedMatrix = None, refresh_log=()
	):
		self.head_dim = head_dim
		self.block = block
		self.prefill_k = prefill_k
		self.prefill_v = prefill_v
		self.auto_k = auto_k
		self.auto_v = auto_v
		self.refresh_log = tuple(refresh_log)

	@property
	def prefill_len(self) -> int:
		return self.prefill_k.rows if self.prefill_k is not None else 0

	@property
	def t_auto(self) -> int:
		return self.auto_k.rows

	def segments(self) -> dict:
		return {
			CacheSegment.PREFILL_K.value: self.prefill_k,
			CacheSegment.PREFILL_V.value: self.prefill_v,
			CacheSegment.AUTO_K.value: self.auto_k,
			CacheSegment.AUTO_V.value: self.auto_v,
		}

	def replace(self, **changes) -> 'KVCache':
		kwargs = {
			'head_dim': self.head_dim,
			'block': self.block,
			'refresh_log': self.refresh_log,
			**self.segments(),
		}
		kwargs.update(changes)
		return self.__class__(**kwargs)

	def __iter__(self):
		for segment in self.segments().values():
			if segment is not None:
				yield from segment.parts


def _empty_auto(head_dim: int, block: int) -> PackedMatrix:
	encoding = Encoding(kind=EncodingKind.INNER_COMPACTED.value, rows=0, cols=head_dim, block_size=block)
	return PackedMatrix(encoding=encoding, parts=[], encrypted=True)


def init_cache(K_pref: PackedMatrix, V_pref: PackedMatrix, ctx: Context, head_dim: int = None) -> KVCache:
	"""Кэш из K, V префикса (Outer, m×d2). Без префикса нужен head_dim"""
	if K_pref is not None:
		if V_pref is None or (K_pref.rows, K_pref.cols) != (V_pref.rows, V_pref.cols):
			raise DimensionError(Message.SHAPE_MISMATCH.value)
		for segment in (K_pref, V_pref):
			if segment.kind != EncodingKind.OUTER.value or segment.encoding.block_size != 1:
				raise DimensionError(Message.UNKNOWN_ENCODING.value)
		if K_pref.rows > ctx.n:
			raise DimensionError(Message.SLOT_OVERFLOW.value)
		head_dim = K_pref.cols
	if not head_dim:
		raise DimensionError(Message.INVALID_DIMS.value)
	block = make_encoding(EncodingKind.INNER_COMPACTED.value, 1, head_dim, ctx.n).block_size
	return KVCache(
		head_dim=head_dim, block=block, prefill_k=K_pref, prefill_v=V_pref,
		auto_k=_empty_auto(head_dim, block), auto_v=_empty_auto(head_dim, block),
	)


def _check_aligned(token: SlotCiphertext, head_dim: int):
	# эмуляция видит слоты; вне 0..d-1 вектор обязан быть нулевым
	if np.any(token.slots[head_dim:]):
		raise DimensionError(Message.MISALIGNED_TOKEN.value)


def _append(segment: PackedMatrix, token: SlotCiphertext, offset: int, opens_part: bool, ctx: Context) -> PackedMatrix:
	moved = token if offset == 0 else ctx.rotate(token, -offset)
	masked = ctx.mult_plain(moved, ctx.mask(offset, offset + segment.cols))
	parts = list(segment.parts)
	if opens_part:
		parts.append(ctx.encrypt(ctx.plain([])))
	parts[-1] = ctx.add(parts[-1], masked)
	encoding = Encoding(
		kind=EncodingKind.INNER_COMPACTED.value, rows=segment.rows + 1, cols=segment.cols,
		block_size=segment.encoding.block_size, block_width=segment.encoding.block_width,
	)
	return PackedMatrix(encoding=encoding, parts=parts, encrypted=True)


def append_token(cache: KVCache, k_new: SlotCiphertext, v_new: SlotCiphertext, ctx: Context) -> KVCache:
	"""
	Дописывает k, v в блок t mod B последнего шифротекста автосегмента.
	Каждый вызов: 2 умножения на маску и 2 сложения; поворот при ненулевом смещении.
	"""
	_check_aligned(k_new, cache.head_dim)
	_check_aligned(v_new, cache.head_dim)
	position = cache.t_auto % cache.block
	offset = position * cache.head_dim
	opens_part = position == 0
	return cache.replace(
		auto_k=_append(cache.auto_k, k_new, offset, opens_part, ctx),
		auto_v=_append(cache.auto_v, v_new, offset, opens_part, ctx),
	)


def refresh_ciphertext(ct: SlotCiphertext, ctx: Context, ch: MpcChannel) -> SlotCiphertext:
	"""Сервер маскирует r, клиент перешифровывает, сервер снимает маску"""
	mask = ch.random(ctx.n)
	masked = ctx.add_plain(ct, ctx.plain(mask))
	ch.send('refresh', Direction.TO_CLIENT.value, nbytes=ctx.params.ciphertext_bytes)
	fresh = ctx.encrypt(ctx.decrypt(masked))
	ch.send('refresh', Direction.TO_SERVER.value, nbytes=ctx.params.ciphertext_bytes)
	ctx.counter.increment(CounterField.REFRESH_EVENTS.value)
	return ctx.add_plain(fresh, ctx.plain(-mask))


def maybe_refresh(cache: KVCache, ctx: Context, ch: MpcChannel, force: bool = False) -> KVCache:
	"""Обновляет шифротексты кэша с бюджетом не выше порога (или все при force, такие события помечены forced)"""
	threshold = ctx.params.refresh_threshold
	margin = threshold + ctx.params.noise_costs['mult_cipher']
	events = list(cache.refresh_log)
	changes = {}
	for name, segment in cache.segments().items():
		if segment is None:
			continue
		parts = []
		for index, ct in enumerate(segment.parts):
			if force or ct.noise_budget <= threshold:
				events.append(RefreshEvent(
					step=cache.t_auto, segment=name, part_id=index, budget_before=ct.noise_budget,
					mpc_bytes=2 * ctx.params.ciphertext_bytes, forced=ct.noise_budget > threshold,
				))
				logger.info('refresh %s[%s] budget=%s step=%s', name, index, ct.noise_budget, cache.t_auto)
				ct = refresh_ciphertext(ct, ctx, ch)
			elif ct.noise_budget <= margin:
				logger.warning('noise budget %s[%s] approaching threshold: %s', name, index, ct.noise_budget)
			parts.append(ct)
		changes[name] = PackedMatrix(encoding=segment.encoding, parts=parts, encrypted=True)
	return cache.replace(refresh_log=events, **changes)


def cache_stats(cache: KVCache, ctx: Context) -> dict:
	ct_count = sum(1 for _ in cache)
	return {
		'ct_count': ct_count,
		'prefill_cts': ct_count - len(cache.auto_k) - len(cache.auto_v),
		'auto_cts': len(cache.auto_k),
		't_auto': cache.t_auto,
		'prefill_len': cache.prefill_len,
		'refresh_count': len(cache.refresh_log),
		'refresh_bytes': sum(event.mpc_bytes for event in cache.refresh_log),
		'bytes': ct_count * ctx.params.ciphertext_bytes,
	}


def save_cache(cache: KVCache, directory: str, ctx: Context):
	"""Сохраняет кэш: manifest.json и по файлу матрицы на сегмент (строка = шифротекст)"""
	os.makedirs(directory, exist_ok=True)
	segments = {}
	for name, segment in cache.segments().items():
		if segment is None:
			continue
		filename = f'{name}.bin'
		slots = np.stack([ct.slots for ct in segment.parts]) if segment.parts else np.zeros((0, ctx.n), dtype=np.int64)
		write_matrix(os.path.join(directory, filename), slots, ctx.p)
		segments[name] = {
			'encoding': segment.encoding.as_dict(),
			'file': filename,
			'budgets': [ct.noise_budget for ct in segment.parts],
		}
	manifest = {
		'head_dim': cache.head_dim,
		'block': cache.block,
		'n_slots': ctx.n,
		'modulus': ctx.p,
		'segments': segments,
		'refresh_log': [event.as_dict() for event in cache.refresh_log],
	}
	with open(os.path.join(directory, MANIFEST), 'w') as f:
		json.dump(manifest, f, indent=2)


def load_cache(directory: str, ctx: Context) -> KVCache:
	try:
		with open(os.path.join(directory, MANIFEST)) as f:
			data = json.load(f)
	except (OSError, ValueError) as e:
		raise SchemaError(str(e))
	serializer = CacheManifestSerializer(data=data)
	if not serializer.is_valid():
		raise SchemaError(json.dumps(serializer.errors, ensure_ascii=False))
	manifest = serializer.save()
	if manifest['n_slots'] != ctx.n or manifest['modulus'] != ctx.p:
		raise SchemaError(Message.CACHE_MISMATCH.value)

	segments = {}
	for name, entry in manifest['segments'].items():
		slots, modulus = read_matrix(os.path.join(directory, entry['file']))
		if modulus != ctx.p or len(slots) != len(entry['budgets']):
			raise SchemaError(Message.CACHE_MISMATCH.value)
		parts = [ctx.restore(row, budget) for row, budget in zip(slots, entry['budgets'])]
		segments[name] = PackedMatrix(encoding=Encoding(**entry['encoding']), parts=parts, encrypted=True)
	return KVCache(
		head_dim=manifest['head_dim'],
		block=manifest['block'],
		refresh_log=[RefreshEvent(**event) for event in manifest['refresh_log']],
		**segments,
	)
