"""
Эмуляция SIMD-схемы гомоморфного шифрования над Z_p.

Шифротекст хранит вектор из n слотов в открытом виде и бюджет шума.
Каждая операция списывает стоимость из бюджета и увеличивает счётчик
контекста, поэтому по счётчикам можно сверять затраты ядер с формулами.
"""
import itertools
import logging
import threading
from contextlib import contextmanager

import numpy as np

from cryptogen.src.entity.constants import CounterField, Message, OpKind
from cryptogen.src.entity.errors import DecryptionFailure, DimensionError, NoiseBudgetExhausted, ParameterError

logger = logging.getLogger(__name__)

DEFAULT_NOISE_COSTS = {
	OpKind.MULT_PLAIN.value: 20,
	OpKind.MULT_CIPHER.value: 40,
	OpKind.ROTATE.value: 2,
	OpKind.ADD.value: 0,
	OpKind.ADD_PLAIN.value: 0,
}
MODULUS_BITS = 29
# произведение двух вычетов должно помещаться в int64
MODULUS_LIMIT = 1 << 31
_WITNESSES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_power_of_two(value: int) -> bool:
	return value > 0 and value & (value - 1) == 0


def next_power_of_two(value: int) -> int:
	return 1 if value <= 1 else 1 << (int(value) - 1).bit_length()


def ceil_log2(value: int) -> int:
	return 0 if value <= 1 else (int(value) - 1).bit_length()


def is_prime(value: int) -> bool:
	"""Детерминированный тест Миллера-Рабина, точен для value < 3.3·10^24"""
	if value < 2:
		return False
	for witness in _WITNESSES:
		if value % witness == 0:
			return value == witness
	d, s = value - 1, 0
	while d % 2 == 0:
		d //= 2
		s += 1
	for witness in _WITNESSES:
		x = pow(witness, d, value)
		if x in (1, value - 1):
			continue
		for _ in range(s - 1):
			x = x * x % value
			if x == value - 1:
				break
		else:
			return False
	return True


def default_modulus(n_slots: int, bits: int = MODULUS_BITS) -> int:
	"""Наименьшее простое p >= 2^bits с p ≡ 1 (mod 2n)"""
	step = 2 * n_slots
	start = 1 << bits
	candidate = start + (1 - start) % step
	while not is_prime(candidate):
		candidate += step
	return candidate


class BackendParams:
	"""Параметры схемы: число слотов, модуль открытого текста и учёт шума"""

	def __init__(
		self, *, n_slots: int = 8192, plain_modulus: int = None, initial_noise_budget: int = 190,
		noise_costs: dict = None, refresh_threshold: int = 60
	):
		self.n_slots = int(n_slots)
		if not is_power_of_two(self.n_slots) or self.n_slots < 2:
			raise ParameterError(Message.SLOTS_NOT_POWER.value)
		self.plain_modulus = int(plain_modulus) if plain_modulus is not None else default_modulus(self.n_slots)
		self.initial_noise_budget = int(initial_noise_budget)
		self.noise_costs = dict(DEFAULT_NOISE_COSTS)
		self.noise_costs.update(noise_costs or {})
		self.refresh_threshold = int(refresh_threshold)
		self.validate()

	def validate(self):
		p = self.plain_modulus
		if not is_prime(p) or p >= MODULUS_LIMIT:
			raise ParameterError(Message.MODULUS_NOT_PRIME.value)
		if p % (2 * self.n_slots) != 1:
			raise ParameterError(Message.MODULUS_NOT_NTT.value)
		if self.initial_noise_budget < 0 or self.refresh_threshold < 0:
			raise ParameterError(Message.BUDGET_NEGATIVE.value)
		if self.refresh_threshold >= self.initial_noise_budget:
			raise ParameterError(Message.THRESHOLD_ABOVE_BUDGET.value)
		for kind in OpKind.values:
			if kind not in self.noise_costs:
				raise ParameterError(f'{Message.NOISE_COST_MISSING.value}: {kind}')
			if self.noise_costs[kind] < 0:
				raise ParameterError(Message.BUDGET_NEGATIVE.value)

	@property
	def modulus_bits(self) -> int:
		return self.plain_modulus.bit_length()

	@property
	def ciphertext_bytes(self) -> int:
		"""Объём одного вектора слотов на проводе: n·⌈log2 p⌉/8"""
		return (self.n_slots * self.modulus_bits + 7) // 8

	def as_dict(self) -> dict:
		return {
			'n_slots': self.n_slots,
			'plain_modulus': self.plain_modulus,
			'initial_noise_budget': self.initial_noise_budget,
			'noise_costs': dict(self.noise_costs),
			'refresh_threshold': self.refresh_threshold,
		}

	@classmethod
	def from_settings(cls, config: dict, **overrides):
		kwargs = {
			'n_slots': config.get('N_SLOTS', 8192),
			'initial_noise_budget': config.get('INITIAL_NOISE_BUDGET', 190),
			'noise_costs': config.get('NOISE_COSTS'),
			'refresh_threshold': config.get('REFRESH_THRESHOLD', 60),
		}
		kwargs.update({key: value for key, value in overrides.items() if value is not None})
		return cls(**kwargs)

	def replace(self, **changes):
		kwargs = self.as_dict()
		if 'n_slots' in changes and 'plain_modulus' not in changes:
			kwargs.pop('plain_modulus')
		kwargs.update(changes)
		return self.__class__(**kwargs)

	def __eq__(self, other):
		if type(other) == self.__class__:
			return self.as_dict() == other.as_dict()
		return NotImplemented

	def __hash__(self):
		return hash((self.n_slots, self.plain_modulus, self.initial_noise_budget, self.refresh_threshold))

	def __repr__(self):
		return f'BackendParams(n={self.n_slots}, p={self.plain_modulus})'


class OpCounter:
	"""Счётчики операций. Допускает параллельные инкременты и слияние"""
	fields = tuple(CounterField.values)

	def __init__(self, **values):
		for name in self.fields:
			setattr(self, name, int(values.get(name, 0)))
		self._lock = threading.Lock()

	def increment(self, field: str, amount: int = 1):
		with self._lock:
			setattr(self, field, getattr(self, field) + amount)

	def merge(self, other: 'OpCounter'):
		with self._lock:
			for name in self.fields:
				setattr(self, name, getattr(self, name) + getattr(other, name))
		return self

	def copy(self) -> 'OpCounter':
		return self.__class__(**self.as_dict())

	def as_dict(self) -> dict:
		return {name: getattr(self, name) for name in self.fields}

	def homomorphic(self) -> dict:
		"""Счётчики без байтов MPC и событий обновления"""
		excluded = (CounterField.MPC_BYTES.value, CounterField.REFRESH_EVENTS.value)
		return {name: value for name, value in self.as_dict().items() if name not in excluded}

	def __add__(self, other):
		return self.__class__(**{name: getattr(self, name) + getattr(other, name) for name in self.fields})

	def __sub__(self, other):
		return self.__class__(**{name: getattr(self, name) - getattr(other, name) for name in self.fields})

	def __eq__(self, other):
		if type(other) == self.__class__:
			return self.as_dict() == other.as_dict()
		return NotImplemented

	def __iter__(self):
		return iter(self.as_dict().items())

	def __repr__(self):
		values = ', '.join(f'{name}={value}' for name, value in self if value)
		return f'OpCounter({values})'


class PlainVector:
	"""Открытый текст: вектор из n вычетов по модулю p"""
	__slots__ = ('slots',)

	def __init__(self, slots: np.ndarray):
		self.slots = slots

	def __len__(self):
		return len(self.slots)


class SlotCiphertext:
	__slots__ = ('slots', 'noise_budget', 'id')

	def __init__(self, *, slots: np.ndarray, noise_budget: int, id: int):
		slots.setflags(write=False)
		self.slots = slots
		self.noise_budget = noise_budget
		self.id = id

	def __len__(self):
		return len(self.slots)

	def __repr__(self):
		return f'SlotCiphertext(id={self.id}, budget={self.noise_budget})'


class Context:
	"""
	Контекст схемы. Хранит параметры, счётчики и разбивку счётчиков по компонентам.
	Для параллельной обработки голов используется fork() и последующий join().
	"""

	def __init__(self, params: BackendParams, *, _ids=None):
		self.params = params
		self.n = params.n_slots
		self.p = params.plain_modulus
		self.counter = OpCounter()
		self.breakdown = {}
		self._track_stack = []
		self._ids = _ids if _ids is not None else itertools.count()

	def fork(self) -> 'Context':
		return self.__class__(self.params, _ids=self._ids)

	def join(self, *children: 'Context'):
		for child in children:
			self.counter.merge(child.counter)
			tracked = OpCounter()
			for component, counter in child.breakdown.items():
				self._component(component).merge(counter)
				tracked.merge(counter)
			if self._track_stack:
				self._track_stack[-1]['nested'].merge(tracked)

	def _component(self, component: str) -> OpCounter:
		if component not in self.breakdown:
			self.breakdown[component] = OpCounter()
		return self.breakdown[component]

	@contextmanager
	def track(self, component: str):
		"""Относит операции внутри блока к компоненту; вложенные блоки не считаются дважды"""
		frame = {'start': self.counter.copy(), 'nested': OpCounter()}
		self._track_stack.append(frame)
		try:
			yield
		finally:
			self._track_stack.pop()
			total = self.counter - frame['start']
			self._component(component).merge(total - frame['nested'])
			if self._track_stack:
				self._track_stack[-1]['nested'].merge(total)

	def snapshot(self) -> OpCounter:
		return self.counter.copy()

	# кодирование

	def plain(self, values) -> PlainVector:
		"""Открытый текст из целых (в том числе отрицательных), дополненный нулями до n"""
		values = np.mod(np.asarray(values, dtype=np.int64).ravel(), self.p)
		if values.size > self.n:
			raise DimensionError(Message.SLOT_OVERFLOW.value)
		slots = np.zeros(self.n, dtype=np.int64)
		slots[:values.size] = values
		return PlainVector(slots)

	def one_hot(self, positions, values=1) -> PlainVector:
		slots = np.zeros(self.n, dtype=np.int64)
		slots[np.asarray(positions, dtype=np.int64)] = values
		return self.plain(slots)

	def mask(self, start: int, stop: int) -> PlainVector:
		slots = np.zeros(self.n, dtype=np.int64)
		slots[start:stop] = 1
		return PlainVector(slots)

	def _as_slots(self, vector) -> np.ndarray:
		if isinstance(vector, PlainVector):
			return vector.slots
		values = np.asarray(vector, dtype=np.int64)
		if values.shape != (self.n,):
			raise DimensionError(Message.LENGTH_MISMATCH.value)
		return np.mod(values, self.p)

	def _ciphertext(self, slots: np.ndarray, budget: int) -> SlotCiphertext:
		return SlotCiphertext(slots=slots, noise_budget=budget, id=next(self._ids))

	def _spend(self, budget: int, kind: str) -> int:
		budget -= self.params.noise_costs[kind]
		if budget < 0:
			raise NoiseBudgetExhausted(f'{Message.BUDGET_EXHAUSTED.value}: {kind}')
		self.counter.increment(kind)
		return budget

	# операции схемы

	def encrypt(self, vector) -> SlotCiphertext:
		slots = self._as_slots(vector).copy()
		self.counter.increment(CounterField.ENCRYPT.value)
		return self._ciphertext(slots, self.params.initial_noise_budget)

	def decrypt(self, ct: SlotCiphertext) -> PlainVector:
		if ct.noise_budget <= 0:
			raise DecryptionFailure(Message.DECRYPTION_FAILED.value)
		self.counter.increment(CounterField.DECRYPT.value)
		return PlainVector(ct.slots.copy())

	def restore(self, slots: np.ndarray, noise_budget: int) -> SlotCiphertext:
		"""Восстанавливает сохранённый шифротекст, не считая его новым"""
		return self._ciphertext(self._as_slots(slots).copy(), int(noise_budget))

	def add(self, a: SlotCiphertext, b: SlotCiphertext) -> SlotCiphertext:
		budget = self._spend(min(a.noise_budget, b.noise_budget), OpKind.ADD.value)
		return self._ciphertext((a.slots + b.slots) % self.p, budget)

	def add_plain(self, a: SlotCiphertext, v: PlainVector) -> SlotCiphertext:
		budget = self._spend(a.noise_budget, OpKind.ADD_PLAIN.value)
		return self._ciphertext((a.slots + self._as_slots(v)) % self.p, budget)

	def mult_plain(self, a: SlotCiphertext, v: PlainVector) -> SlotCiphertext:
		budget = self._spend(a.noise_budget, OpKind.MULT_PLAIN.value)
		return self._ciphertext(a.slots * self._as_slots(v) % self.p, budget)

	def mult_cipher(self, a: SlotCiphertext, b: SlotCiphertext) -> SlotCiphertext:
		budget = self._spend(min(a.noise_budget, b.noise_budget), OpKind.MULT_CIPHER.value)
		return self._ciphertext(a.slots * b.slots % self.p, budget)

	def rotate(self, a: SlotCiphertext, k: int) -> SlotCiphertext:
		"""Циклический сдвиг влево: слот i результата равен слоту (i + k) mod n"""
		budget = self._spend(a.noise_budget, OpKind.ROTATE.value)
		return self._ciphertext(np.roll(a.slots, -(int(k) % self.n)), budget)

	def sum(self, cts) -> SlotCiphertext:
		result = None
		for ct in cts:
			result = ct if result is None else self.add(result, ct)
		return result


def new_context(params: BackendParams = None) -> Context:
	return Context(params or BackendParams())
