"""
Целочисленные ядра в фиксированной точке.

Вещественное v хранится как round(v·2^f), отрицательные числа в Z_p
представлены вычетами больше p/2. Одни и те же ядра вызываются и эталоном
в открытом виде, и MPC-протоколами после восстановления долей, поэтому
результаты совпадают побитно.
"""
import math

import numpy as np
from scipy.special import erf

from cryptogen.src.entity.constants import Message
from cryptogen.src.entity.errors import DimensionError, ParameterError

LN2 = math.log(2)
# e^r ≈ a·(r + b)² + c на (-ln2, 0]
EXP_COEFFS = (0.3585, 1.353, 0.344)
# GELU(y) ≈ ((c4·y + c3)·y + c2)·y² + c1·y на [0, 3.2]
GELU_COEFFS = (0.46451946, 0.54230097, -0.18586515, 0.02147016)
GELU_CLIP = 3.2
GELU_TOLERANCE = 1e-2
# квантование входа и выхода целочисленного GELU, в единицах младшего разряда
GELU_QUANTIZATION_ULPS = 8
# запас разрядов над 2f
HEADROOM_BITS = 6
# маска причинности: -2^(f+6)
MASK_SHIFT = 6
# начальные приближения 1/sqrt для чётного и нечётного порядка
INV_SQRT_SEEDS = (1.2, 0.85)


class FixedPointParams:
	def __init__(self, *, modulus: int, frac_bits: int = 10, reciprocal_iterations: int = 4, inv_sqrt_iterations: int = 3):
		self.modulus = int(modulus)
		self.frac_bits = int(frac_bits)
		self.reciprocal_iterations = int(reciprocal_iterations)
		self.inv_sqrt_iterations = int(inv_sqrt_iterations)
		if self.frac_bits < 1 or 1 << (2 * self.frac_bits + HEADROOM_BITS) >= self.modulus:
			raise ParameterError(Message.FIXED_POINT_HEADROOM.value)

	@classmethod
	def from_settings(cls, config: dict, modulus: int, **overrides):
		kwargs = {
			'frac_bits': config.get('FRACTION_BITS', 10),
			'reciprocal_iterations': config.get('RECIPROCAL_ITERATIONS', 4),
			'inv_sqrt_iterations': config.get('INV_SQRT_ITERATIONS', 3),
		}
		kwargs.update({key: value for key, value in overrides.items() if value is not None})
		return cls(modulus=modulus, **kwargs)

	@property
	def scale(self) -> int:
		return 1 << self.frac_bits

	def encode(self, values) -> np.ndarray:
		return np.round(np.asarray(values, dtype=np.float64) * self.scale).astype(np.int64)

	def decode(self, values) -> np.ndarray:
		return np.asarray(values, dtype=np.float64) / self.scale

	def const(self, value: float) -> int:
		return int(round(value * self.scale))

	def to_field(self, values) -> np.ndarray:
		return np.mod(np.asarray(values, dtype=np.int64), self.modulus)

	def to_signed(self, values) -> np.ndarray:
		values = np.mod(np.asarray(values, dtype=np.int64), self.modulus)
		return np.where(values > self.modulus // 2, values - self.modulus, values)

	def wrap(self, values) -> np.ndarray:
		"""Значение со знаком после приведения по модулю p"""
		return self.to_signed(values)

	def __eq__(self, other):
		if type(other) == self.__class__:
			return vars(self) == vars(other)
		return NotImplemented

	def __hash__(self):
		return hash(tuple(vars(self).values()))


def _bit_length(values: np.ndarray) -> np.ndarray:
	"""Номер старшего бита положительных целых (аналог int.bit_length)"""
	return np.frexp(values.astype(np.float64))[1].astype(np.int64)


def _shift(values, amount: np.ndarray) -> np.ndarray:
	"""values·2^amount для сдвигов любого знака"""
	amount = np.asarray(amount, dtype=np.int64)
	left = np.left_shift(values, np.maximum(amount, 0))
	right = np.right_shift(values, np.maximum(-amount, 0))
	return np.where(amount >= 0, left, right)


def truncate(x, fp: FixedPointParams, bits: int = None) -> np.ndarray:
	"""Сдвиг вправо с округлением вниз"""
	return np.right_shift(np.asarray(x, dtype=np.int64), fp.frac_bits if bits is None else bits)


def mul(a, b, fp: FixedPointParams) -> np.ndarray:
	return truncate(np.asarray(a, dtype=np.int64) * np.asarray(b, dtype=np.int64), fp)


def shift_stages(fp: FixedPointParams) -> int:
	"""Число каскадов мультиплексора: сдвиг на f + 2 и больше уже обнуляет экспоненту"""
	return (fp.frac_bits + 2).bit_length()


def shift_by_bits(values, z, fp: FixedPointParams) -> np.ndarray:
	"""values >> z каскадом условных сдвигов по битам z"""
	stages = shift_stages(fp)
	z = np.minimum(np.asarray(z, dtype=np.int64), (1 << stages) - 1)
	result = np.asarray(values, dtype=np.int64)
	for bit in range(stages):
		result = np.where((z >> bit) & 1, result >> (1 << bit), result)
	return result


def exp_neg(x, fp: FixedPointParams) -> np.ndarray:
	"""
	e^x для x <= 0: x = -z·ln2 + r, e^r по квадратичному приближению,
	затем деление на 2^z сдвигом.
	"""
	f = fp.frac_bits
	x = np.minimum(np.asarray(x, dtype=np.int64), 0)
	z = ((-x) * fp.const(1 / LN2)) >> (2 * f)
	r = x + z * fp.const(LN2)
	a, b, c = EXP_COEFFS
	t = r + fp.const(b)
	e = ((fp.const(a) * ((t * t) >> f)) >> f) + fp.const(c)
	return shift_by_bits(e, z, fp)


def reciprocal(s, fp: FixedPointParams) -> np.ndarray:
	"""
	Y ≈ 2^(2f)·(2^f / s), то есть 1/s в масштабе 2f.
	Итерации Ньютона Y ← Y·(2 - s·Y) от начального 1.5·2^-k, k = bit_length(s).
	"""
	f = fp.frac_bits
	s = np.asarray(s, dtype=np.int64)
	k = _bit_length(np.maximum(s, 1))
	y = _shift(np.full_like(s, 3), 3 * f - k - 1)
	two = 2 << (3 * f)
	for _ in range(fp.reciprocal_iterations):
		y = (y * (two - s * y)) >> (3 * f)
	return np.where(s > 0, y, 0)


def inv_sqrt(v, fp: FixedPointParams) -> np.ndarray:
	"""
	1/sqrt(v) в масштабе 2f. Начальное приближение 2^(-k/2), для нечётного k
	с поправкой на sqrt(2), затем итерации Y ← Y·(3 - v·Y²)/2.
	"""
	f = fp.frac_bits
	v = np.asarray(v, dtype=np.int64)
	k = _bit_length(np.maximum(v, 1)) - f
	half = np.floor_divide(k, 2)
	even, odd = (fp.const(seed) for seed in INV_SQRT_SEEDS)
	seed = np.where(k % 2 == 0, even, odd).astype(np.int64)
	y = _shift(seed, f - half)
	three = 3 << f
	for _ in range(fp.inv_sqrt_iterations):
		t = (((v * y) >> (2 * f)) * y) >> (2 * f)
		y = (y * (three - t)) >> (f + 1)
	return np.where(v > 0, y, 0)


def causal_bias(mask, fp: FixedPointParams) -> np.ndarray:
	return np.where(mask, 0, -(1 << (fp.frac_bits + MASK_SHIFT))).astype(np.int64)


def softmax(x, fp: FixedPointParams, mask=None) -> np.ndarray:
	"""Softmax по последней оси; mask (True = разрешено) добавляется как большой отрицательный сдвиг"""
	f = fp.frac_bits
	x = np.asarray(x, dtype=np.int64)
	if x.ndim == 0 or x.shape[-1] == 0:
		raise DimensionError(Message.INVALID_DIMS.value)
	if mask is not None:
		x = x + causal_bias(mask, fp)
	e = exp_neg(x - x.max(axis=-1, keepdims=True), fp)
	y = reciprocal(e.sum(axis=-1, keepdims=True), fp)
	return (e * y) >> (2 * f)


def layernorm(x, gamma, beta, fp: FixedPointParams) -> np.ndarray:
	f = fp.frac_bits
	x = np.asarray(x, dtype=np.int64)
	if x.ndim == 0 or x.shape[-1] == 0:
		raise DimensionError(Message.INVALID_DIMS.value)
	d = x.shape[-1]
	centered = x - np.floor_divide(x.sum(axis=-1, keepdims=True), d)
	variance = np.floor_divide(((centered * centered) >> f).sum(axis=-1, keepdims=True), d)
	norm = (centered * inv_sqrt(variance, fp)) >> (2 * f)
	return ((norm * np.asarray(gamma, dtype=np.int64)) >> f) + np.asarray(beta, dtype=np.int64)


def gelu(x, fp: FixedPointParams) -> np.ndarray:
	"""
	Полином четвёртой степени от |x| в два вложенных квадратичных шага.
	Для x < 0 используется GELU(x) = GELU(|x|) - |x|, за пределами ±3.2
	функция точно равна x или 0.
	"""
	f = fp.frac_bits
	x = np.asarray(x, dtype=np.int64)
	c1, c2, c3, c4 = (fp.const(c) for c in GELU_COEFFS)
	y = np.abs(x)
	inner = ((((((c4 * y) >> f) + c3) * y) >> f) + c2)
	poly = ((inner * ((y * y) >> f)) >> f) + ((c1 * y) >> f)
	clip = fp.const(GELU_CLIP)
	out = np.where(x >= 0, poly, poly - y)
	out = np.where(x > clip, x, out)
	return np.where(x < -clip, 0, out)


# вещественные эталоны

def gelu_reference(x) -> np.ndarray:
	x = np.asarray(x, dtype=np.float64)
	return 0.5 * x * (1 + erf(x / math.sqrt(2)))


def softmax_reference(x, mask=None) -> np.ndarray:
	x = np.asarray(x, dtype=np.float64)
	if mask is not None:
		x = np.where(mask, x, -np.inf)
	e = np.exp(x - x.max(axis=-1, keepdims=True))
	return e / e.sum(axis=-1, keepdims=True)


def layernorm_reference(x, gamma, beta, eps: float = 1e-12) -> np.ndarray:
	x = np.asarray(x, dtype=np.float64)
	centered = x - x.mean(axis=-1, keepdims=True)
	variance = (centered ** 2).mean(axis=-1, keepdims=True)
	return centered / np.sqrt(variance + eps) * gamma + beta


def fit_gelu(clip: float = GELU_CLIP, points: int = 3201):
	"""
	Подбор коэффициентов c1..c4 методом наименьших квадратов по базису y, y², y³, y⁴.
	Возвращает (коэффициенты, максимальная ошибка на [-clip, clip]).
	"""
	y = np.linspace(0, clip, points)
	basis = np.stack([y, y ** 2, y ** 3, y ** 4], axis=1)
	coeffs, *_ = np.linalg.lstsq(basis, gelu_reference(y), rcond=None)
	c1, c2, c3, c4 = coeffs
	grid = np.linspace(-clip, clip, 2 * points - 1)
	magnitude = np.abs(grid)
	poly = ((c4 * magnitude + c3) * magnitude + c2) * magnitude ** 2 + c1 * magnitude
	approx = np.where(grid >= 0, poly, poly - magnitude)
	return tuple(float(c) for c in coeffs), float(np.max(np.abs(approx - gelu_reference(grid))))


def gelu_kernel_tolerance(fp: FixedPointParams) -> float:
	return GELU_TOLERANCE + GELU_QUANTIZATION_ULPS / fp.scale


def gelu_kernel_error(fp: FixedPointParams, clip: float = GELU_CLIP, points: int = 6401) -> float:
	"""Максимальная ошибка целочисленного GELU (коэффициенты GELU_COEFFS) на [-clip, clip] после декодирования"""
	grid = np.linspace(-clip, clip, points)
	approx = fp.decode(gelu(fp.encode(grid), fp))
	return float(np.max(np.abs(approx - gelu_reference(grid))))
