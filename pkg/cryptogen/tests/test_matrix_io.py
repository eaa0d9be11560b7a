import numpy as np
import pytest

from cryptogen.src.entity.errors import SchemaError
from cryptogen.src.entity.matrix_io import (
	HEADER_WORDS,
	dumps,
	loads,
	read_json_matrix,
	read_matrix,
	write_json_matrix,
	write_matrix,
)

P = 536871809


def test_binary_format(tmp_path, rng):
	A = rng.integers(-1000, 1000, size=(4, 6))
	path = tmp_path / 'a.bin'
	write_matrix(str(path), A, P)
	assert path.stat().st_size == 8 * (HEADER_WORDS + A.size)
	matrix, modulus = read_matrix(str(path))
	assert modulus == P
	assert np.array_equal(matrix, np.mod(A, P))


def test_header_layout():
	data = dumps(np.array([[1, 2, 3]]), P)
	assert data[:8] == b'CGMATRX1'
	assert int.from_bytes(data[8:16], 'little') == 1
	assert int.from_bytes(data[16:24], 'little') == 3
	assert int.from_bytes(data[24:32], 'little') == P
	assert data[32:64] == bytes(32)


def test_corrupted_files():
	data = dumps(np.ones((2, 2)), P)
	with pytest.raises(SchemaError):
		loads(b'XXXXXXXX' + data[8:])
	with pytest.raises(SchemaError):
		loads(data[:-8])
	with pytest.raises(SchemaError):
		loads(data[:20])
	bad = bytearray(data)
	bad[-8:] = (P + 1).to_bytes(8, 'little')
	with pytest.raises(SchemaError):
		loads(bytes(bad))


def test_missing_file(tmp_path):
	with pytest.raises(SchemaError):
		read_matrix(str(tmp_path / 'absent.bin'))


def test_json_matrix(tmp_path):
	path = str(tmp_path / 'a.json')
	write_json_matrix(path, [[1, -2], [3, 4]])
	assert np.array_equal(read_json_matrix(path), [[1, -2], [3, 4]])
	with open(path, 'w') as f:
		f.write('{')
	with pytest.raises(SchemaError):
		read_json_matrix(path)
