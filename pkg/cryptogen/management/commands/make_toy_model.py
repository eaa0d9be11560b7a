import logging

from cryptogen.management.base import CryptoGenCommand
from cryptogen.src.entity.model import Model, ModelConfig, quantize
from cryptogen.src.services.model_store import save_model, synthesize_weights

logger = logging.getLogger(__name__)


class Command(CryptoGenCommand):
	help = 'Синтезирует квантованную модель и сохраняет веса в двоичном формате матриц'

	def add_arguments(self, parser):
		parser.add_argument('--out', required=True, help='каталог модели')
		parser.add_argument('--seed', type=int, help='зерно генератора весов')
		parser.add_argument('--layers', type=int, default=2)
		parser.add_argument('--hidden', type=int, default=32)
		parser.add_argument('--heads', type=int, default=4)
		parser.add_argument('--ffn-dim', type=int, default=64)
		parser.add_argument('--vocab', type=int, default=64)
		parser.add_argument('--max-seq', type=int, default=128)
		parser.add_argument('--frac-bits', type=int, help='дробных бит, по умолчанию из настроек')
		parser.add_argument('--modulus', type=int, help='модуль файлов весов')

	def handle(self, *args, **options):
		config = ModelConfig(
			layers=options['layers'],
			hidden=options['hidden'],
			heads=options['heads'],
			ffn_dim=options['ffn_dim'],
			vocab=options['vocab'],
			max_seq=options['max_seq'],
			frac_bits=options['frac_bits'] or self.config['FRACTION_BITS'],
		)
		seed = self.get_seed(options)
		model = Model(config=config, weights=quantize(synthesize_weights(config, seed), config.frac_bits))
		path = save_model(model, options['out'], modulus=options['modulus'])
		logger.info('model %s, seed %s', config, seed)
		self.stdout.write(path)
