from cryptogen.management.base import CryptoGenCommand
from cryptogen.src.entity.constants import ReportFormat
from cryptogen.src.entity.fixed_point import GELU_CLIP, GELU_COEFFS, GELU_TOLERANCE, fit_gelu
from cryptogen.src.generics.renderers import render


class Command(CryptoGenCommand):
	help = 'Подбор коэффициентов полинома GELU и его максимальная ошибка'

	def add_arguments(self, parser):
		parser.add_argument('--clip', type=float, default=GELU_CLIP, help='граница отрезка аппроксимации')
		parser.add_argument('--points', type=int, default=3201, help='узлов сетки на [0, clip]')
		parser.add_argument('--out', help='файл отчёта')

	def handle(self, *args, **options):
		if options['clip'] <= 0 or options['points'] < 5:
			raise self.usage_error('clip > 0, points >= 5')
		coeffs, error = fit_gelu(options['clip'], options['points'])
		content = render({
			'clip': options['clip'],
			'coefficients': list(coeffs),
			'bundled': list(GELU_COEFFS),
			'max_error': error,
			'tolerance': GELU_TOLERANCE,
		}, ReportFormat.JSON.value)
		self.write(content, options.get('out'), 'gelu.json')
		if error > GELU_TOLERANCE:
			raise self.failure(f'max_error {error:.4g} > {GELU_TOLERANCE}')
