import json
import logging
import os

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from cryptogen.src.entity.backend import BackendParams, new_context
from cryptogen.src.entity.errors import (
	CryptoGenError,
	DecryptionFailure,
	NoiseBudgetExhausted,
	ParameterError,
	SchemaError,
)
from cryptogen.src.entity.fixed_point import FixedPointParams
from cryptogen.src.services.model_store import load_model
from cryptogen.src.services.nonlinear import MpcChannel
from cryptogen.src.services.serializers import BackendParamsSerializer

logger = logging.getLogger(__name__)

EXIT_FAILED = 1
EXIT_USAGE = 2


class CryptoGenCommand(BaseCommand):
	"""Общие флаги и разбор параметров для команд эмуляции"""

	def add_arguments(self, parser):
		parser.add_argument('--params', help='JSON с параметрами схемы')
		parser.add_argument('--model', help='манифест модели')
		parser.add_argument('--slots', type=int, help='число слотов шифротекста')
		parser.add_argument('--seed', type=int, help='зерно генератора')
		parser.add_argument('--threads', type=int, default=1)
		parser.add_argument('--out', help='файл или каталог для отчёта')

	@property
	def config(self) -> dict:
		return settings.CRYPTOGEN

	def usage_error(self, message) -> CommandError:
		return CommandError(message, returncode=EXIT_USAGE)

	def failure(self, message) -> CommandError:
		return CommandError(message, returncode=EXIT_FAILED)

	def get_seed(self, options) -> int:
		return options['seed'] if options.get('seed') is not None else self.config['SEED']

	def get_params(self, options) -> BackendParams:
		data = {}
		if options.get('params'):
			try:
				with open(options['params']) as f:
					data = json.load(f)
			except (OSError, ValueError) as e:
				raise self.usage_error(str(e))
		else:
			data = {
				'n_slots': self.config['N_SLOTS'],
				'initial_noise_budget': self.config['INITIAL_NOISE_BUDGET'],
				'noise_costs': self.config['NOISE_COSTS'],
				'refresh_threshold': self.config['REFRESH_THRESHOLD'],
			}
		if options.get('slots'):
			data = {**data, 'n_slots': options['slots']}
			data.pop('plain_modulus', None)
		serializer = BackendParamsSerializer(data=data)
		if not serializer.is_valid():
			raise self.usage_error(json.dumps(serializer.errors, ensure_ascii=False))
		return serializer.save()

	def get_fixed_point(self, params: BackendParams, frac_bits: int) -> FixedPointParams:
		try:
			return FixedPointParams.from_settings(self.config, params.plain_modulus, frac_bits=frac_bits)
		except ParameterError as e:
			raise self.usage_error(str(e))

	def get_model(self, options):
		path = options.get('model') or self.config['TOY_MODEL']
		try:
			return load_model(path)
		except SchemaError as e:
			raise self.usage_error(f'{path}: {e}')

	def new_session(self, params: BackendParams, seed: int):
		ctx = new_context(params)
		return ctx, MpcChannel(modulus=params.plain_modulus, seed=seed, counter=ctx.counter)

	def write(self, content: bytes, out: str = None, filename: str = None):
		"""Пишет в файл, в каталог out под именем filename или в stdout"""
		if not out:
			self.stdout.write(content.decode('utf-8'), ending='')
			return
		path = out
		if filename and (os.path.isdir(out) or out.endswith(os.sep)):
			os.makedirs(out, exist_ok=True)
			path = os.path.join(out, filename)
		with open(path, 'wb') as f:
			f.write(content)
		logger.info('written %s', path)

	def execute(self, *args, **options):
		try:
			return super().execute(*args, **options)
		except (NoiseBudgetExhausted, DecryptionFailure) as e:
			raise self.failure(str(e))
		except CryptoGenError as e:
			raise self.usage_error(str(e))
