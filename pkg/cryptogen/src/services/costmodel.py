"""
Модель стоимости умножений на открытый текст (Mult), поворотов (Rot) и
числа шифротекстов (Ct) по методам и стадиям, порядки стоимости внимания
и сверка предсказаний со счётчиками запуска.

Опубликованные константы хранятся рядом с формулами: ячейка, которую формула
не воспроизводит на опорных размерностях, помечается как reported-only.
"""
import logging
import math

import numpy as np

from cryptogen.src.entity.backend import ceil_log2, next_power_of_two
from cryptogen.src.entity.constants import CellStatus, Component, Message, Method, Order, Stage
from cryptogen.src.entity.errors import DimensionError, UnknownMethod
from cryptogen.src.services.serializers import CostRowSerializer, ValidationReportSerializer

logger = logging.getLogger(__name__)

METRICS = ('mult', 'rot', 'ct')


class CostDims:
	"""Размерности оценки; density - число столбцов на шифротекст в упаковке предзаполнения"""
	reference = {'m': 128, 'd1': 768, 'd2': 64, 'n': 8192, 'k': 5}

	def __init__(self, *, m: int = 128, d1: int = 768, d2: int = 64, n: int = 8192, k: int = 5, density: int = None):
		self.m = m
		self.d1 = d1
		self.d2 = d2
		self.n = n
		self.k = k
		self.density = density if density is not None else max(n // m, 1)
		if min(m, d1, d2, n, self.density) < 1 or k < 0:
			raise DimensionError(Message.INVALID_DIMS.value)

	@property
	def is_reference(self) -> bool:
		return self.as_dict() == {**self.reference, 'density': self.n // self.m}

	def as_dict(self) -> dict:
		return {'m': self.m, 'd1': self.d1, 'd2': self.d2, 'n': self.n, 'k': self.k, 'density': self.density}

	@classmethod
	def parse(cls, text: str, density: int = None) -> 'CostDims':
		"""Строка вида m,d1,d2,n,k"""
		try:
			m, d1, d2, n, k = (int(value) for value in text.split(','))
		except ValueError:
			raise DimensionError(f'{Message.INVALID_DIMS.value}: {text}')
		return cls(m=m, d1=d1, d2=d2, n=n, k=k, density=density)


class CostTriple:
	def __init__(self, *, mult: int, rot: int, ct: int, formulas: dict = None, reported: dict = None):
		self.mult = int(mult)
		self.rot = int(rot)
		self.ct = int(ct)
		if min(self.mult, self.rot, self.ct) < 0:
			raise DimensionError(Message.INVALID_DIMS.value)
		self.formulas = dict(formulas or {})
		self.reported = dict(reported or {})

	def status(self, metric: str) -> str:
		if metric not in self.reported:
			return CellStatus.FORMULA.value
		if self.reported[metric] == getattr(self, metric):
			return CellStatus.REPRODUCED.value
		return CellStatus.REPORTED_ONLY.value

	def reported_only(self) -> list:
		return [metric for metric in METRICS if self.status(metric) == CellStatus.REPORTED_ONLY.value]

	def __add__(self, other: 'CostTriple') -> 'CostTriple':
		return self.__class__(mult=self.mult + other.mult, rot=self.rot + other.rot, ct=self.ct + other.ct)

	def __iter__(self):
		for metric in METRICS:
			yield metric, getattr(self, metric)

	def as_dict(self) -> dict:
		return dict(self)

	def __eq__(self, other):
		if type(other) == self.__class__:
			return self.as_dict() == other.as_dict() and self.reported == other.reported
		return NotImplemented

	def __repr__(self):
		return f'CostTriple(mult={self.mult}, rot={self.rot}, ct={self.ct})'


def cpmm_mult(m: int, d1: int, d2: int, n: int, density: int = None) -> int:
	"""Число умножений CPMM: ⌈d1/g⌉·R·⌈d2/R⌉, R = min(g, d2 до степени двойки)"""
	groups = density or n // next_power_of_two(m)
	reps = min(groups, next_power_of_two(d2))
	return -(-d1 // groups) * reps * -(-d2 // reps)


def cpvm_mult(d2: int) -> int:
	"""Диагонали CPVM и маска старших слотов"""
	return next_power_of_two(d2) + 1


class MethodSpec:
	"""Строка таблицы: формулы предзаполнения и одного шага генерации"""
	name = None
	formulas = {}
	reported = {}
	attention = {}

	def prefill(self, dims: CostDims) -> tuple:
		raise NotImplementedError()

	def gen(self, dims: CostDims) -> tuple:
		"""Стоимость k шагов генерации"""
		return tuple(value * dims.k for value in self.prefill(dims))

	def evaluate(self, stage: str, dims: CostDims) -> CostTriple:
		if stage == Stage.PREFILL.value:
			values = self.prefill(dims)
		elif stage == Stage.GEN.value:
			values = self.gen(dims)
		else:
			prefill, gen = self.prefill(dims), self.gen(dims)
			values = tuple(a + b for a, b in zip(prefill, gen))
		reported = self.reported.get(stage, {}) if dims.is_reference else {}
		return CostTriple(
			**dict(zip(METRICS, values)),
			formulas=self.formulas.get(stage, {}),
			reported=reported,
		)


def _total(prefill: dict, gen: dict) -> dict:
	return {metric: prefill[metric] + gen[metric] for metric in METRICS}


class GazelleSpec(MethodSpec):
	name = Method.GAZELLE.value
	formulas = {
		Stage.PREFILL.value: {'mult': 'm·d1', 'rot': 'm·d1', 'ct': 'm·d1/d2'},
		Stage.GEN.value: {'mult': 'm·d1·k', 'rot': 'm·d1·k', 'ct': 'm·d1/d2·k'},
	}
	reported = {
		Stage.PREFILL.value: {'mult': 98304, 'rot': 96768, 'ct': 1664},
		Stage.GEN.value: {'mult': 491520, 'rot': 483840, 'ct': 8320},
		Stage.TOTAL.value: {'mult': 589824, 'rot': 580608, 'ct': 9984},
	}

	def prefill(self, dims):
		md = dims.m * dims.d1
		return md, md, -(-md // dims.d2)


class IronSpec(MethodSpec):
	name = Method.IRON.value
	formulas = {
		Stage.PREFILL.value: {'mult': 'm·d1·d2/n', 'rot': '0', 'ct': '√(m·d1·d2/n)'},
		Stage.GEN.value: {'mult': 'm·d1·d2/n·k', 'rot': '0', 'ct': '√(m·d1·d2/n)·k'},
	}
	reported = {
		Stage.PREFILL.value: {'mult': 768, 'rot': 0, 'ct': 56},
		Stage.GEN.value: {'mult': 3840, 'rot': 0, 'ct': 280},
		Stage.TOTAL.value: {'mult': 4608, 'rot': 0, 'ct': 336},
	}

	def prefill(self, dims):
		mult = -(-dims.m * dims.d1 * dims.d2 // dims.n)
		return mult, 0, math.ceil(math.sqrt(mult))


class BoltSpec(MethodSpec):
	name = Method.BOLT.value
	formulas = {
		Stage.PREFILL.value: {'mult': 'm·d1·d2/n', 'rot': '√(m²·d1²·d2/n²)', 'ct': 'm·(d1+d2)/n'},
		Stage.GEN.value: {'mult': 'm·d1·d2/n·k', 'rot': '√(m²·d1²·d2/n²)·k', 'ct': 'm·(d1+d2)/n·k'},
	}
	reported = {
		Stage.PREFILL.value: {'mult': 768, 'rot': 43, 'ct': 12},
		Stage.GEN.value: {'mult': 3840, 'rot': 215, 'ct': 60},
		Stage.TOTAL.value: {'mult': 4608, 'rot': 258, 'ct': 72},
	}
	attention = {
		Stage.PREFILL.value: (Order.D.value, Order.M2.value),
		Stage.GEN.value: (Order.D.value, Order.K2.value),
	}

	def prefill(self, dims):
		mult = -(-dims.m * dims.d1 * dims.d2 // dims.n)
		rot = math.ceil(dims.m * dims.d1 * math.sqrt(dims.d2) / dims.n)
		ct = -(-dims.m * (dims.d1 + dims.d2) // dims.n)
		return mult, rot, ct


class ThorSpec(MethodSpec):
	name = Method.THOR.value
	formulas = {
		Stage.PREFILL.value: {'mult': 'm·d1·d2/n', 'rot': 'd2 + m·d1/n', 'ct': 'm·d1/n'},
		Stage.GEN.value: {'mult': 'm·d1·d2/n·k', 'rot': '(d2 + m·d1/n)·k', 'ct': 'm·d1/n·k'},
	}
	reported = {
		Stage.PREFILL.value: {'mult': 9908, 'rot': 282, 'ct': 13},
		Stage.GEN.value: {'mult': 49540, 'rot': 1410, 'ct': 65},
		Stage.TOTAL.value: {'mult': 59448, 'rot': 1692, 'ct': 78},
	}
	attention = BoltSpec.attention

	def prefill(self, dims):
		mult = -(-dims.m * dims.d1 * dims.d2 // dims.n)
		ct = -(-dims.m * dims.d1 // dims.n)
		return mult, dims.d2 + ct, ct


class CryptoGenSpec(MethodSpec):
	"""
	Предзаполнение: CPMM с плотностью g столбцов на шифротекст, входных шифротекстов ⌈d1/g⌉.
	Генерация: CPVM с d2 диагоналями на токен и ⌈d1/n⌉ шифротекстами.
	"""
	name = Method.CRYPTOGEN.value
	formulas = {
		Stage.PREFILL.value: {'mult': '⌈d1/g⌉·d2', 'rot': '√(m²·d1²·d2/n²)', 'ct': '⌈d1/g⌉'},
		Stage.GEN.value: {'mult': 'd2·k', 'rot': '⌈log2 d1⌉·k', 'ct': '⌈d1/n⌉·k'},
	}
	reported = {
		Stage.PREFILL.value: {'mult': 768, 'rot': 43, 'ct': 12},
		Stage.GEN.value: {'mult': 320, 'rot': 25, 'ct': 5},
		Stage.TOTAL.value: {'mult': 1088, 'rot': 68, 'ct': 17},
	}
	attention = {
		Stage.PREFILL.value: (Order.D.value, Order.M2.value),
		Stage.GEN.value: (Order.LOG_D.value, Order.K.value),
	}

	def prefill(self, dims):
		mult = cpmm_mult(dims.m, dims.d1, dims.d2, dims.n, dims.density)
		rot = math.ceil(dims.m * dims.d1 * math.sqrt(dims.d2) / dims.n)
		return mult, rot, -(-dims.d1 // dims.density)

	def gen(self, dims):
		return dims.d2 * dims.k, ceil_log2(dims.d1) * dims.k, -(-dims.d1 // dims.n) * dims.k


METHODS = {spec.name: spec() for spec in (GazelleSpec, IronSpec, BoltSpec, ThorSpec, CryptoGenSpec)}


def get_method(method: str) -> MethodSpec:
	if method not in METHODS:
		raise UnknownMethod(f'{Message.UNKNOWN_METHOD.value}: {method}. Доступны: {", ".join(METHODS)}')
	return METHODS[method]


def predict_costs(
	method: str, stage: str, m: int, d1: int, d2: int, n: int, k: int = 0, density: int = None
) -> CostTriple:
	dims = CostDims(m=m, d1=d1, d2=d2, n=n, k=k, density=density)
	return get_method(method).evaluate(stage, dims)


def predict_attention_costs(method: str, stage: str, m: int = None, k: int = None, d: int = None) -> dict:
	"""Порядки поворотов и умножений шифротекстов во внимании; n/a для методов только линейных слоёв"""
	spec = get_method(method)
	rot_order, ctct_order = spec.attention.get(stage, (Order.NA.value, Order.NA.value))
	return {'rot_order': rot_order, 'ctct_order': ctct_order}


def cost_table(dims: CostDims) -> list:
	"""Строки таблицы Mult/Rot/Ct: метод × стадия × метрика"""
	rows = []
	for method in METHODS:
		for stage in (Stage.PREFILL.value, Stage.GEN.value, Stage.TOTAL.value):
			triple = get_method(method).evaluate(stage, dims)
			for metric, value in triple:
				status = triple.status(metric)
				if status == CellStatus.REPORTED_ONLY.value:
					logger.warning('%s %s %s: formula %s, reported %s', method, stage, metric, value, triple.reported[metric])
				rows.append({
					'method': method,
					'stage': stage,
					'metric': metric,
					'formula': triple.formulas.get(metric, 'Prefill + Gen'),
					'value': value,
					'reported': triple.reported.get(metric),
					'status': status,
				})
	return CostRowSerializer(rows, many=True).data


def reported_only(dims: CostDims = None) -> list:
	return [row for row in cost_table(dims or CostDims()) if row['status'] == CellStatus.REPORTED_ONLY.value]


def attention_table() -> list:
	rows = []
	for method in METHODS:
		for stage in (Stage.PREFILL.value, Stage.GEN.value):
			rows.append({'method': method, 'stage': stage, **predict_attention_costs(method, stage)})
	return rows


# сверка со счётчиками

def fit_exponent(xs, ys) -> float:
	"""Наклон прямой log y от log x"""
	slope, _ = np.polyfit(np.log(np.asarray(xs, dtype=np.float64)), np.log(np.asarray(ys, dtype=np.float64)), 1)
	return float(slope)


def quadratic_coefficient(xs, ys) -> float:
	"""Старший коэффициент квадратичной аппроксимации, отнесённый к среднему y"""
	c2, _, _ = np.polyfit(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64), 2)
	return float(c2 / max(np.mean(ys), 1.0))


class ValidationItem:
	def __init__(self, *, check: str, expected, measured, passed: bool, detail: str = ''):
		self.check = check
		self.expected = expected
		self.measured = measured
		self.passed = bool(passed)
		self.detail = detail

	def as_dict(self) -> dict:
		return dict(vars(self))


class ValidationReport:
	def __init__(self):
		self.items = []
		self.skipped = []

	def add(self, check: str, expected, measured, passed: bool = None, detail: str = ''):
		if passed is None:
			passed = expected == measured
		item = ValidationItem(check=check, expected=expected, measured=measured, passed=passed, detail=detail)
		if not item.passed:
			logger.warning('validation %s: expected %s, measured %s %s', check, expected, measured, detail)
		self.items.append(item)

	@property
	def passed(self) -> bool:
		return all(item.passed for item in self.items)

	def failures(self) -> list:
		return [item for item in self.items if not item.passed]

	def __iter__(self):
		return iter(self.items)

	def as_dict(self) -> dict:
		return ValidationReportSerializer(self).data


def _layer_projections(model: dict, m: int, n: int) -> int:
	d1, heads, ffn = model['hidden'], model['heads'], model['ffn_dim']
	d2 = d1 // heads
	return (
		3 * heads * cpmm_mult(m, d1, d2, n)
		+ cpmm_mult(m, d1, d1, n) + cpmm_mult(m, d1, ffn, n) + cpmm_mult(m, ffn, d1, n)
	)


def _step_projections(model: dict) -> int:
	d1, heads, ffn = model['hidden'], model['heads'], model['ffn_dim']
	return 3 * heads * cpvm_mult(d1 // heads) + cpvm_mult(d1) + cpvm_mult(ffn) + cpvm_mult(d1)


def validate_against_counts(report, dims: CostDims) -> ValidationReport:
	"""
	Сравнивает счётчики отчёта генерации с формулами ядер. Точные проверки:
	умножения на открытый текст в проекциях, умножения шифротекстов во внимании,
	число шифротекстов автосегмента. Порядковая: показатель роста накопленных
	умножений шифротекстов по k.
	"""
	params = report.params
	model, backend = params.get('model'), params.get('backend')
	if not model or not backend:
		raise DimensionError(Message.DIMS_MISMATCH.value)
	head_dim = model['hidden'] // model['heads']
	actual = (len(report.prompt), model['hidden'], head_dim, backend['n_slots'], len(report.tokens))
	if (dims.m, dims.d1, dims.d2, dims.n, dims.k) != actual:
		raise DimensionError(f'{Message.DIMS_MISMATCH.value}: {dims.as_dict()} != {actual}')

	layers, heads, vocab = model['layers'], model['heads'], model['vocab']
	block = -(-dims.n // dims.d2)
	result = ValidationReport()
	ctpt, ctct = Component.CTPT.value, Component.CTCT.value

	expected = layers * _layer_projections(model, dims.m, dims.n) + cpvm_mult(vocab)
	result.add('prefill.ctpt.mult_plain', expected, report.prefill['breakdown'][ctpt].mult_plain)
	expected = 2 * dims.m * dims.d2 * layers * heads
	result.add('prefill.ctct.mult_cipher', expected, report.prefill['breakdown'][ctct].mult_cipher)

	step_ctpt = layers * _step_projections(model) + cpvm_mult(vocab)
	for entry in report.steps:
		t = entry['step']
		result.add(f'gen[{t}].ctpt.mult_plain', step_ctpt, entry['breakdown'][ctpt].mult_plain)
		expected = (2 * dims.d2 + 2 * -(-t // block)) * layers * heads
		result.add(f'gen[{t}].ctct.mult_cipher', expected, entry['breakdown'][ctct].mult_cipher)

	if report.steps:
		t_auto = report.steps[-1]['step']
		result.add('gen.cache.auto_cts', -(-t_auto // block), report.steps[-1]['cache']['auto_cts'])

	cumulative = report.cumulative('mult_cipher')
	points = [k for k in (8, 16, 32, 64, 128, 256, 512) if k <= len(cumulative)]
	if len(points) >= 2:
		exponent = fit_exponent(points, [cumulative[k - 1] for k in points])
		result.add(
			'gen.ctct.order', 1.0, round(exponent, 4), passed=abs(exponent - 1.0) <= 0.1,
			detail=f'k={points}',
		)
	else:
		result.skipped.append('gen.ctct.order')
	return result
