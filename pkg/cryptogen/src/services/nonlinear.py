"""
Аддитивные доли в Z_p, канал MPC и нелинейные протоколы.

Протоколы эмулируются: доли восстанавливаются, к значению применяется
ядро из fixed_point, результат заново разделяется свежей маской. Объём
переписки считается по структуре протокола и зависит только от формы входа.
"""
import logging

import numpy as np

from cryptogen.src.entity.backend import Context, OpCounter, PlainVector, SlotCiphertext, ceil_log2
from cryptogen.src.entity.constants import CounterField, Direction, Message
from cryptogen.src.entity.errors import DimensionError
from cryptogen.src.entity import fixed_point
from cryptogen.src.entity.fixed_point import FixedPointParams

logger = logging.getLogger(__name__)


class SharePair:
	"""Доли клиента и сервера: значение = client + server (mod p)"""

	def __init__(self, *, client, server, modulus: int):
		self.client = np.asarray(client, dtype=np.int64)
		self.server = np.asarray(server, dtype=np.int64)
		self.modulus = int(modulus)
		if self.client.shape != self.server.shape:
			raise DimensionError(Message.SHARE_LENGTH.value)

	@property
	def shape(self):
		return self.client.shape

	@property
	def size(self) -> int:
		return self.client.size

	def __len__(self):
		return len(self.client)

	def reconstruct(self) -> np.ndarray:
		return (self.client + self.server) % self.modulus

	def signed(self) -> np.ndarray:
		values = self.reconstruct()
		return np.where(values > self.modulus // 2, values - self.modulus, values)

	def _check(self, other: 'SharePair'):
		if other.modulus != self.modulus:
			raise DimensionError(Message.SHARE_MODULUS.value)
		if other.shape != self.shape:
			raise DimensionError(Message.SHARE_LENGTH.value)

	def __add__(self, other: 'SharePair') -> 'SharePair':
		self._check(other)
		return self.__class__(
			client=(self.client + other.client) % self.modulus,
			server=(self.server + other.server) % self.modulus,
			modulus=self.modulus,
		)

	def add_public(self, values) -> 'SharePair':
		"""Открытая константа прибавляется к доле сервера"""
		server = (self.server + np.mod(np.asarray(values, dtype=np.int64), self.modulus)) % self.modulus
		return self.__class__(client=self.client, server=server, modulus=self.modulus)

	def mul_public(self, value: int) -> 'SharePair':
		return self.__class__(
			client=self.client * value % self.modulus,
			server=self.server * value % self.modulus,
			modulus=self.modulus,
		)

	def __getitem__(self, index) -> 'SharePair':
		return self.__class__(client=self.client[index], server=self.server[index], modulus=self.modulus)

	def ravel(self) -> 'SharePair':
		return self.__class__(client=self.client.ravel(), server=self.server.ravel(), modulus=self.modulus)

	def scatter(self, index_map, length: int) -> 'SharePair':
		"""Локальная перестановка: слот s получает элемент index_map[s], при index_map[s] < 0 ноль"""
		index_map = np.asarray(index_map, dtype=np.int64)
		flat = self.ravel()
		client = np.zeros(length, dtype=np.int64)
		server = np.zeros(length, dtype=np.int64)
		used = index_map >= 0
		client[used] = flat.client[index_map[used]]
		server[used] = flat.server[index_map[used]]
		return self.__class__(client=client, server=server, modulus=self.modulus)

	@classmethod
	def stack(cls, pairs, axis: int = 0) -> 'SharePair':
		pairs = list(pairs)
		return cls(
			client=np.stack([pair.client for pair in pairs], axis=axis),
			server=np.stack([pair.server for pair in pairs], axis=axis),
			modulus=pairs[0].modulus,
		)

	@classmethod
	def concatenate(cls, pairs, axis: int = -1) -> 'SharePair':
		pairs = list(pairs)
		return cls(
			client=np.concatenate([pair.client for pair in pairs], axis=axis),
			server=np.concatenate([pair.server for pair in pairs], axis=axis),
			modulus=pairs[0].modulus,
		)

	def __repr__(self):
		return f'SharePair(shape={self.shape})'


class MpcChannel:
	"""
	Канал между клиентом и сервером. Считает байты и раунды, ведёт журнал сообщений
	и выдаёт маски из собственного генератора. Если задан counter, байты
	дублируются в счётчик контекста.
	"""

	def __init__(self, *, modulus: int, seed: int = 0, counter: OpCounter = None, _seed_sequence=None):
		self.modulus = int(modulus)
		self.element_bytes = (self.modulus.bit_length() + 7) // 8
		self.bytes_sent = 0
		self.rounds = 0
		self.transcript = []
		self.counter = counter
		self._seed_sequence = _seed_sequence if _seed_sequence is not None else np.random.SeedSequence(seed)
		self.rng = np.random.default_rng(self._seed_sequence)

	def fork(self, counter: OpCounter = None) -> 'MpcChannel':
		child = self._seed_sequence.spawn(1)[0]
		return self.__class__(modulus=self.modulus, counter=counter, _seed_sequence=child)

	def join(self, *children: 'MpcChannel'):
		"""Дочерние каналы работали параллельно: байты складываются, раунды берутся по максимуму"""
		if not children:
			return
		for child in children:
			self.bytes_sent += child.bytes_sent
			self.transcript.extend(child.transcript)
		self.rounds += max(child.rounds for child in children)

	def send(self, protocol: str, direction: str, elements: int = 0, rounds: int = 1, nbytes: int = None):
		if nbytes is None:
			nbytes = int(elements) * self.element_bytes
		self.bytes_sent += nbytes
		self.rounds += rounds
		self.transcript.append({
			'protocol': protocol,
			'direction': direction,
			'elements': int(elements),
			'bytes': int(nbytes),
			'rounds': int(rounds),
		})
		if self.counter is not None:
			self.counter.increment(CounterField.MPC_BYTES.value, nbytes)

	def random(self, shape) -> np.ndarray:
		return self.rng.integers(0, self.modulus, size=shape, dtype=np.int64)

	def share(self, values) -> SharePair:
		"""Делит значение: доля сервера равна маске r, доля клиента равна v - r"""
		values = np.mod(np.asarray(values, dtype=np.int64), self.modulus)
		mask = self.random(values.shape)
		return SharePair(client=(values - mask) % self.modulus, server=mask, modulus=self.modulus)

	def dump(self) -> dict:
		return {'bytes_sent': self.bytes_sent, 'rounds': self.rounds, 'messages': list(self.transcript)}


def _charge(ch: MpcChannel, protocol: str, elements: int, *, mults: int = 0, compares: int = 0, truncations: int = 0):
	"""Умножение по тройкам Бивера: 2 элемента и 1 раунд; сравнение: по элементу на бит и log2(бит) раундов"""
	bits = ch.modulus.bit_length()
	total = int(elements) * (2 * mults + bits * compares + 2 * truncations)
	rounds = mults + compares * ceil_log2(bits) + truncations
	ch.send(protocol, Direction.TO_SERVER.value, total, rounds)


def _reshare(values, ch: MpcChannel) -> SharePair:
	return ch.share(values)


# преобразования между шифротекстами и долями

def he_to_shares(ct: SlotCiphertext, ctx: Context, ch: MpcChannel, positions=None) -> SharePair:
	"""
	Сервер маскирует шифротекст случайным r, клиент расшифровывает разность.
	Доля сервера r, доля клиента decrypt(ct - r); берутся слоты positions.
	"""
	mask = ch.random(ctx.n)
	masked = ctx.add_plain(ct, ctx.plain(-mask))
	ch.send('he_to_shares', Direction.TO_CLIENT.value, nbytes=ctx.params.ciphertext_bytes)
	client = ctx.decrypt(masked).slots
	if positions is None:
		positions = np.arange(ctx.n)
	positions = np.asarray(positions, dtype=np.int64)
	return SharePair(client=client[positions], server=mask[positions], modulus=ctx.p)


def shares_to_he(s: SharePair, ctx: Context, ch: MpcChannel, positions=None) -> SlotCiphertext:
	"""Клиент шифрует свою долю, сервер прибавляет свою; результат со свежим бюджетом"""
	flat = s.ravel()
	if positions is None:
		positions = np.arange(flat.size)
	positions = np.asarray(positions, dtype=np.int64)
	if positions.size and positions.max() >= ctx.n:
		raise DimensionError(Message.SLOT_OVERFLOW.value)
	client = np.zeros(ctx.n, dtype=np.int64)
	server = np.zeros(ctx.n, dtype=np.int64)
	client[positions] = flat.client
	server[positions] = flat.server
	ct = ctx.encrypt(PlainVector(client))
	ch.send('shares_to_he', Direction.TO_SERVER.value, nbytes=ctx.params.ciphertext_bytes)
	return ctx.add_plain(ct, PlainVector(server))


# нелинейные протоколы

def mpc_truncate(s: SharePair, fp: FixedPointParams, ch: MpcChannel, bits: int = None) -> SharePair:
	_charge(ch, 'truncate', s.size, truncations=1)
	return _reshare(fixed_point.truncate(s.signed(), fp, bits), ch)


def mpc_scale(s: SharePair, value: int, fp: FixedPointParams, ch: MpcChannel) -> SharePair:
	"""Умножение на открытую константу в масштабе f и усечение"""
	return mpc_truncate(s.mul_public(value), fp, ch)


def mpc_gelu(s: SharePair, fp: FixedPointParams, ch: MpcChannel) -> SharePair:
	_charge(ch, 'gelu', s.size, mults=7, compares=3, truncations=5)
	return _reshare(fixed_point.gelu(s.signed(), fp), ch)


def mpc_softmax(s: SharePair, fp: FixedPointParams, ch: MpcChannel, mask=None) -> SharePair:
	"""Softmax по последней оси долей; mask задаёт разрешённые позиции"""
	width = s.shape[-1]
	if width == 0:
		raise DimensionError(Message.INVALID_DIMS.value)
	rows = s.size // max(width, 1)
	stages = fixed_point.shift_stages(fp)
	ch.send('softmax.max', Direction.TO_SERVER.value, rows * max(width - 1, 0) * ch.modulus.bit_length(),
		rounds=ceil_log2(width) * ceil_log2(ch.modulus.bit_length()))
	_charge(ch, 'softmax.exp', s.size, mults=1, truncations=3)
	_charge(ch, 'softmax.bits', s.size, compares=1)
	for stage in range(stages):
		_charge(ch, f'softmax.shift{stage}', s.size, mults=1)
	_charge(ch, 'softmax.reciprocal', rows, compares=1, mults=2 * fp.reciprocal_iterations,
		truncations=fp.reciprocal_iterations)
	_charge(ch, 'softmax.scale', s.size, mults=1, truncations=1)
	logger.debug('softmax rows=%s width=%s', rows, width)
	return _reshare(fixed_point.softmax(s.signed(), fp, mask=mask), ch)


def mpc_layernorm(s: SharePair, gamma, beta, fp: FixedPointParams, ch: MpcChannel) -> SharePair:
	width = s.shape[-1]
	rows = s.size // max(width, 1)
	_charge(ch, 'layernorm.moments', s.size, mults=1, truncations=1)
	_charge(ch, 'layernorm.inv_sqrt', rows, compares=1, mults=2 * fp.inv_sqrt_iterations,
		truncations=3 * fp.inv_sqrt_iterations)
	_charge(ch, 'layernorm.affine', s.size, mults=2, truncations=2)
	return _reshare(fixed_point.layernorm(s.signed(), gamma, beta, fp), ch)


def rescale(ct: SlotCiphertext, length: int, fp: FixedPointParams, ctx: Context, ch: MpcChannel) -> SlotCiphertext:
	"""Возврат из масштаба 2f в f через доли; результат в слотах 0..length-1 со свежим бюджетом"""
	shares = mpc_truncate(he_to_shares(ct, ctx, ch, positions=np.arange(length)), fp, ch)
	return shares_to_he(shares, ctx, ch)
