"""
Двоичный формат матриц: заголовок из 8 слов uint64 (little-endian)
[magic, m, d, p, 0, 0, 0, 0], затем m·d слов по строкам, значения в [0, p).
"""
import json
import os

import numpy as np

from cryptogen.src.entity.constants import Message
from cryptogen.src.entity.errors import SchemaError

MAGIC = int.from_bytes(b'CGMATRX1', 'little')
HEADER_WORDS = 8
WORD = np.dtype('<u8')


def dumps(matrix, modulus: int) -> bytes:
	matrix = np.mod(np.atleast_2d(np.asarray(matrix, dtype=np.int64)), modulus)
	rows, cols = matrix.shape
	header = np.zeros(HEADER_WORDS, dtype=WORD)
	header[:4] = (MAGIC, rows, cols, modulus)
	return header.tobytes() + matrix.astype(WORD).tobytes()


def loads(data: bytes):
	"""Возвращает (матрица int64, модуль)"""
	if len(data) < HEADER_WORDS * WORD.itemsize or len(data) % WORD.itemsize:
		raise SchemaError(Message.TRUNCATED_FILE.value)
	header = np.frombuffer(data, dtype=WORD, count=HEADER_WORDS)
	if int(header[0]) != MAGIC:
		raise SchemaError(Message.BAD_MAGIC.value)
	rows, cols, modulus = (int(value) for value in header[1:4])
	body = np.frombuffer(data, dtype=WORD, offset=HEADER_WORDS * WORD.itemsize)
	if body.size != rows * cols:
		raise SchemaError(Message.TRUNCATED_FILE.value)
	matrix = body.astype(np.int64).reshape(rows, cols)
	if matrix.size and (matrix.min() < 0 or matrix.max() >= modulus):
		raise SchemaError(Message.TRUNCATED_FILE.value)
	return matrix, modulus


def write_matrix(path: str, matrix, modulus: int):
	with open(path, 'wb') as f:
		f.write(dumps(matrix, modulus))


def read_matrix(path: str):
	if not os.path.exists(path):
		raise SchemaError(f'{Message.WEIGHT_MISSING.value}: {path}')
	with open(path, 'rb') as f:
		return loads(f.read())


def write_json_matrix(path: str, matrix):
	with open(path, 'w') as f:
		json.dump(np.asarray(matrix).tolist(), f)


def read_json_matrix(path: str) -> np.ndarray:
	try:
		with open(path) as f:
			return np.atleast_2d(np.asarray(json.load(f), dtype=np.int64))
	except (OSError, ValueError) as e:
		raise SchemaError(str(e))
