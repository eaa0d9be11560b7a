"""
Конфигурация и веса декодера.

Веса хранятся квантованными: целые со знаком в масштабе 2^f. Имена весов
плоские, слои нумеруются префиксом layers.<l>.
"""
import numpy as np

from cryptogen.src.entity.backend import next_power_of_two
from cryptogen.src.entity.constants import Message
from cryptogen.src.entity.errors import DimensionError, SchemaError
from cryptogen.src.entity.fixed_point import FixedPointParams

LAYER_WEIGHTS = (
	'ln1_g', 'ln1_b',
	'w_q', 'b_q', 'w_k', 'b_k', 'w_v', 'b_v', 'w_o', 'b_o',
	'ln2_g', 'ln2_b',
	'w_1', 'b_1', 'w_2', 'b_2',
)


def layer_key(layer: int, name: str) -> str:
	return f'layers.{layer}.{name}'


class ModelConfig:
	def __init__(
		self, *, layers: int, hidden: int, heads: int, ffn_dim: int, vocab: int, max_seq: int, frac_bits: int = 10
	):
		self.layers = layers
		self.hidden = hidden
		self.heads = heads
		self.ffn_dim = ffn_dim
		self.vocab = vocab
		self.max_seq = max_seq
		self.frac_bits = frac_bits
		self.validate()

	def validate(self):
		for name, value in self.as_dict().items():
			if not isinstance(value, (int, np.integer)) or value < 1:
				raise SchemaError(f'{Message.INVALID_DIMS.value}: {name}={value}')
		if self.hidden % self.heads:
			raise SchemaError(Message.HIDDEN_NOT_DIVISIBLE.value)

	@property
	def head_dim(self) -> int:
		return self.hidden // self.heads

	def head_slice(self, head: int) -> slice:
		return slice(head * self.head_dim, (head + 1) * self.head_dim)

	def check_slots(self, n_slots: int):
		"""Все векторы модели и блоки упаковок должны помещаться в один шифротекст"""
		widest = max(self.hidden, self.ffn_dim, self.vocab, next_power_of_two(self.head_dim))
		if widest > n_slots:
			raise DimensionError(f'{Message.SLOT_OVERFLOW.value}: {widest} > {n_slots}')

	def fixed_point(self, modulus: int, **overrides) -> FixedPointParams:
		return FixedPointParams(modulus=modulus, frac_bits=self.frac_bits, **overrides)

	def weight_shapes(self) -> dict:
		d, f = self.hidden, self.ffn_dim
		shapes = {
			'tok_emb': (self.vocab, d),
			'pos_emb': (self.max_seq, d),
			'lnf_g': (d,),
			'lnf_b': (d,),
			'w_u': (d, self.vocab),
		}
		per_layer = {
			'ln1_g': (d,), 'ln1_b': (d,),
			'w_q': (d, d), 'b_q': (d,),
			'w_k': (d, d), 'b_k': (d,),
			'w_v': (d, d), 'b_v': (d,),
			'w_o': (d, d), 'b_o': (d,),
			'ln2_g': (d,), 'ln2_b': (d,),
			'w_1': (d, f), 'b_1': (f,),
			'w_2': (f, d), 'b_2': (d,),
		}
		for layer in range(self.layers):
			for name in LAYER_WEIGHTS:
				shapes[layer_key(layer, name)] = per_layer[name]
		return shapes

	def as_dict(self) -> dict:
		return {
			'layers': self.layers,
			'hidden': self.hidden,
			'heads': self.heads,
			'ffn_dim': self.ffn_dim,
			'vocab': self.vocab,
			'max_seq': self.max_seq,
			'frac_bits': self.frac_bits,
		}

	def __eq__(self, other):
		if type(other) == self.__class__:
			return self.as_dict() == other.as_dict()
		return NotImplemented

	def __hash__(self):
		return hash(tuple(self.as_dict().items()))

	def __repr__(self):
		return f'ModelConfig({self.as_dict()})'


class Model:
	"""Квантованные веса и конфигурация"""

	def __init__(self, *, config: ModelConfig, weights: dict):
		self.config = config
		shapes = config.weight_shapes()
		missing = set(shapes) - set(weights)
		if missing:
			raise SchemaError(f'{Message.WEIGHT_MISSING.value}: {", ".join(sorted(missing))}')
		self.weights = {}
		for name, shape in shapes.items():
			value = np.asarray(weights[name], dtype=np.int64)
			if value.shape != shape:
				raise SchemaError(f'{Message.WEIGHT_SHAPE.value}: {name} {value.shape} != {shape}')
			self.weights[name] = value

	def __getitem__(self, name: str) -> np.ndarray:
		return self.weights[name]

	def layer(self, layer: int, name: str) -> np.ndarray:
		return self.weights[layer_key(layer, name)]

	def embed(self, tokens, start: int = 0) -> np.ndarray:
		"""Эмбеддинг токенов с позиционной добавкой, масштаб f"""
		tokens = np.asarray(tokens, dtype=np.int64)
		if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab):
			raise DimensionError(Message.TOKEN_OUT_OF_VOCAB.value)
		if start + len(tokens) > self.config.max_seq:
			raise DimensionError(Message.SEQUENCE_TOO_LONG.value)
		return self.weights['tok_emb'][tokens] + self.weights['pos_emb'][start:start + len(tokens)]

	def float_weights(self) -> dict:
		scale = float(1 << self.config.frac_bits)
		return {name: value / scale for name, value in self.weights.items()}

	def __iter__(self):
		return iter(self.weights.items())

	def __eq__(self, other):
		if type(other) != self.__class__:
			return NotImplemented
		return self.config == other.config and all(np.array_equal(value, other.weights[name]) for name, value in self)


def quantize(weights: dict, frac_bits: int) -> dict:
	scale = float(1 << frac_bits)
	return {name: np.round(np.asarray(value) * scale).astype(np.int64) for name, value in weights.items()}
