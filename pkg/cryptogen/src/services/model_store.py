"""
Загрузка и сохранение модели.

Манифест (JSON) содержит конфигурацию и либо словарь файлов весов в двоичном
формате матриц, либо зерно, из которого веса синтезируются детерминированно.
"""
import json
import logging
import os

import numpy as np

from cryptogen.src.entity.backend import default_modulus
from cryptogen.src.entity.constants import Message
from cryptogen.src.entity.errors import SchemaError
from cryptogen.src.entity.matrix_io import read_matrix, write_matrix
from cryptogen.src.entity.model import Model, ModelConfig, quantize
from cryptogen.src.services.serializers import ModelManifestSerializer

logger = logging.getLogger(__name__)

WEIGHT_MODULUS_SLOTS = 8192


def synthesize_weights(config: ModelConfig, seed: int) -> dict:
	"""Веса в плавающей точке: матрицы N(0, 1/fan_in), усиления около единицы, малые смещения"""
	rng = np.random.default_rng(seed)
	weights = {}
	for name, shape in config.weight_shapes().items():
		short = name.rsplit('.', 1)[-1]
		if short.endswith('_g'):
			value = 1.0 + 0.1 * rng.standard_normal(shape)
		elif short.endswith('_b') or short.startswith('b_'):
			value = 0.02 * rng.standard_normal(shape)
		elif short.endswith('_emb'):
			value = rng.standard_normal(shape)
		else:
			value = rng.standard_normal(shape) / np.sqrt(shape[0])
		weights[name] = value
	return weights


def _read_manifest(path: str) -> dict:
	try:
		with open(path) as f:
			data = json.load(f)
	except (OSError, ValueError) as e:
		raise SchemaError(str(e))
	serializer = ModelManifestSerializer(data=data)
	if not serializer.is_valid():
		raise SchemaError(json.dumps(serializer.errors, ensure_ascii=False))
	return serializer.save()


def load_model(path: str) -> Model:
	manifest = _read_manifest(path)
	config = manifest['config']
	if not manifest['weights']:
		seed = manifest['init']['seed']
		logger.info('synthesizing weights, seed=%s', seed)
		return Model(config=config, weights=quantize(synthesize_weights(config, seed), config.frac_bits))

	base = os.path.dirname(os.path.abspath(path))
	modulus = manifest['modulus']
	shapes = config.weight_shapes()
	missing = set(shapes) - set(manifest['weights'])
	if missing:
		raise SchemaError(f'{Message.WEIGHT_MISSING.value}: {", ".join(sorted(missing))}')
	weights = {}
	for name, shape in shapes.items():
		matrix, file_modulus = read_matrix(os.path.join(base, manifest['weights'][name]))
		if file_modulus != modulus:
			raise SchemaError(f'{Message.WEIGHT_SHAPE.value}: {name}, p={file_modulus}')
		if matrix.size != int(np.prod(shape)):
			raise SchemaError(f'{Message.WEIGHT_SHAPE.value}: {name} {matrix.shape} != {shape}')
		values = matrix.reshape(shape)
		weights[name] = np.where(values > modulus // 2, values - modulus, values)
	logger.info('loaded %s weights from %s', len(weights), path)
	return Model(config=config, weights=weights)


def save_model(model: Model, directory: str, modulus: int = None, filename: str = 'model.json') -> str:
	"""Пишет веса в двоичном формате и манифест; возвращает путь к манифесту"""
	modulus = modulus or default_modulus(WEIGHT_MODULUS_SLOTS)
	os.makedirs(directory, exist_ok=True)
	files = {}
	for name, value in model:
		files[name] = f'{name}.bin'
		matrix = value if value.ndim == 2 else value.reshape(1, -1)
		write_matrix(os.path.join(directory, files[name]), matrix, modulus)
	manifest = {'config': model.config.as_dict(), 'modulus': modulus, 'weights': files}
	path = os.path.join(directory, filename)
	with open(path, 'w') as f:
		json.dump(manifest, f, indent=2)
	return path
