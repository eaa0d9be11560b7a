from cryptogen.management.base import CryptoGenCommand
from cryptogen.src.entity.constants import CellStatus, ReportFormat
from cryptogen.src.generics.renderers import render
from cryptogen.src.services.costmodel import CostDims, attention_table, cost_table, get_method

COST_HEADER = ['method', 'stage', 'metric', 'formula', 'value', 'reported', 'status']
ATTENTION_HEADER = ['method', 'stage', 'rot_order', 'ctct_order']


class Command(CryptoGenCommand):
	help = 'Таблицы Mult/Rot/Ct и порядков стоимости внимания по методам'

	def add_arguments(self, parser):
		parser.add_argument('--dims', default='128,768,64,8192,5', help='m,d1,d2,n,k')
		parser.add_argument('--density', type=int, help='столбцов на шифротекст при предзаполнении')
		parser.add_argument('--method', action='append', help='оставить только указанные методы')
		parser.add_argument(
			'--format', default=ReportFormat.MARKDOWN.value, choices=ReportFormat.values, dest='fmt',
		)
		parser.add_argument('--out', help='файл или каталог')

	def handle(self, *args, **options):
		dims = CostDims.parse(options['dims'], density=options['density'])
		methods = [get_method(method).name for method in options['method'] or []]
		costs = cost_table(dims)
		attention = attention_table()
		if methods:
			costs = [row for row in costs if row['method'] in methods]
			attention = [row for row in attention if row['method'] in methods]
		reported_only = [row for row in costs if row['status'] == CellStatus.REPORTED_ONLY.value]

		fmt = options['fmt']
		if fmt == ReportFormat.JSON.value:
			content = render({
				'dims': dims.as_dict(),
				'costs': costs,
				'attention': attention,
				'reported_only': reported_only,
			}, fmt)
		else:
			content = render(costs, fmt, header=COST_HEADER)
			if fmt == ReportFormat.MARKDOWN.value:
				content += b'\n' + render(attention, fmt, header=ATTENTION_HEADER)
				if reported_only:
					content += b'\n' + render(reported_only, fmt, header=COST_HEADER)
		self.write(content, options.get('out'), f'costs.{fmt}')

