class CryptoGenError(Exception):
	"""Базовая ошибка эмуляции"""


class ParameterError(CryptoGenError, ValueError):
	"""Некорректные параметры схемы или фиксированной точки"""


class DimensionError(CryptoGenError, ValueError):
	"""Несогласованные размерности, переполнение слотов, невыровненный вход"""


class NoiseBudgetExhausted(CryptoGenError):
	"""Операция опустила бы бюджет шума ниже нуля"""


class DecryptionFailure(CryptoGenError):
	pass


class SchemaError(CryptoGenError, ValueError):
	"""Файл модели, параметров или матрицы не соответствует формату"""


class UnknownMethod(CryptoGenError, ValueError):
	pass
