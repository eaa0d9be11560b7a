import logging

import numpy as np

from cryptogen.management.base import CryptoGenCommand
from cryptogen.src.entity.constants import Component, CounterField, ReportFormat
from cryptogen.src.generics.renderers import render
from cryptogen.src.interface.pipelines import EncryptedGeneration, StatelessGeneration
from cryptogen.src.services.costmodel import fit_exponent

logger = logging.getLogger(__name__)

STEP_COLUMNS = (
	'step', 'mult_plain', 'mult_cipher', 'rotate', 'fresh_ct', 'mpc_bytes', 'refresh_events', 'cache_cts',
)
BREAKDOWN_FIELDS = (
	CounterField.MULT_PLAIN.value, CounterField.MULT_CIPHER.value, CounterField.ROTATE.value, CounterField.MPC_BYTES.value,
)
SWEEP_K = (8, 16, 32, 64, 128, 256, 512)
SWEEP_M = (16, 32, 64)
BASELINE_COLUMNS = (
	'k', 'mult_cipher', 'stateless_mult_cipher', 'mult_cipher_ratio', 'rotate', 'stateless_rotate', 'rotate_ratio',
)


def step_row(entry: dict) -> dict:
	counters = entry['counters'].as_dict()
	row = {
		'step': entry['step'],
		'mult_plain': counters[CounterField.MULT_PLAIN.value],
		'mult_cipher': counters[CounterField.MULT_CIPHER.value],
		'rotate': counters[CounterField.ROTATE.value],
		'fresh_ct': counters[CounterField.ENCRYPT.value],
		'mpc_bytes': counters[CounterField.MPC_BYTES.value],
		'refresh_events': counters[CounterField.REFRESH_EVENTS.value],
		'cache_cts': entry['cache'].get('auto_cts', 0),
	}
	for component in Component.values:
		counter = entry['breakdown'].get(component)
		for field in BREAKDOWN_FIELDS:
			row[f'{component}.{field}'] = getattr(counter, field) if counter is not None else 0
	return row


def step_header() -> list:
	return list(STEP_COLUMNS) + [f'{component}.{field}' for component in Component.values for field in BREAKDOWN_FIELDS]


class Command(CryptoGenCommand):
	help = 'Счётчики операций по шагам генерации, развёртки по k и m, сравнение с генерацией без кэша'

	def add_arguments(self, parser):
		super().add_arguments(parser)
		parser.add_argument('--prefill', type=int, default=8, help='длина запроса')
		parser.add_argument('--gen', type=int, default=16, help='число генерируемых токенов')
		parser.add_argument('--sweep', choices=('k', 'm'), help='развёртка по длине генерации или запроса')
		parser.add_argument('--baseline', action='store_true', help='сравнить с генерацией без кэша')
		parser.add_argument('--transcript', help='файл для журнала канала (JSON)')

	def handle(self, *args, **options):
		self.params = self.get_params(options)
		self.model = self.get_model(options)
		self.fp = self.get_fixed_point(self.params, self.model.config.frac_bits)
		self.seed = self.get_seed(options)
		self.threads = options['threads']
		k = options['gen']

		if options['baseline']:
			rows, header, filename = self.baseline(options['prefill'], k), list(BASELINE_COLUMNS), 'baseline.csv'
		elif options['sweep'] == 'k':
			rows, header, filename = self.sweep_k(options['prefill'], k), ['k'] + list(STEP_COLUMNS[1:]), 'sweep_k.csv'
		elif options['sweep'] == 'm':
			rows, header, filename = self.sweep_m(k), ['m'] + list(STEP_COLUMNS[1:]), 'sweep_m.csv'
		else:
			report, channel = self.run(options['prefill'], k)
			rows, header, filename = [step_row(entry) for entry in report.entries()], step_header(), 'bench.csv'
			if options['transcript']:
				with open(options['transcript'], 'wb') as f:
					f.write(render(channel.dump(), ReportFormat.JSON.value))
		self.write(render(rows, ReportFormat.CSV.value, header=header), options.get('out'), filename)

	def prompt(self, length: int) -> list:
		rng = np.random.default_rng(self.seed)
		return rng.integers(0, self.model.config.vocab, size=length).tolist()

	def run(self, m: int, k: int, pipeline=EncryptedGeneration):
		ctx, channel = self.new_session(self.params, self.seed)
		_, report = pipeline(
			self.model, ctx=ctx, channel=channel, fp=self.fp, threads=self.threads
		).generate(self.prompt(m), k)
		return report, channel

	def sweep_k(self, m: int, k: int) -> list:
		"""Один прогон до k: нарастающие итоги в точках развёртки"""
		report, _ = self.run(m, k)
		points = [value for value in SWEEP_K if value <= k] or [k]
		totals = {field: report.cumulative(field) for field in CounterField.values}
		rows = []
		for point in points:
			entry = report.entries()[point - 1]
			rows.append({
				'k': point,
				'mult_plain': totals[CounterField.MULT_PLAIN.value][point - 1],
				'mult_cipher': totals[CounterField.MULT_CIPHER.value][point - 1],
				'rotate': totals[CounterField.ROTATE.value][point - 1],
				'fresh_ct': totals[CounterField.ENCRYPT.value][point - 1],
				'mpc_bytes': totals[CounterField.MPC_BYTES.value][point - 1],
				'refresh_events': totals[CounterField.REFRESH_EVENTS.value][point - 1],
				'cache_cts': entry['cache'].get('auto_cts', 0),
			})
		if len(points) >= 2:
			logger.info('mult_cipher exponent %.3f', fit_exponent(points, [row['mult_cipher'] for row in rows]))
		return rows

	def sweep_m(self, k: int) -> list:
		"""Суммарная стоимость шагов генерации без предзаполнения"""
		rows = []
		for m in SWEEP_M:
			if m + k > self.model.config.max_seq:
				logger.warning('m=%s skipped: m + k > max_seq', m)
				continue
			report, _ = self.run(m, k)
			row = {'m': m, **{column: 0 for column in STEP_COLUMNS[1:]}}
			for entry in report.steps:
				for column, value in step_row(entry).items():
					if column in row and column != 'cache_cts':
						row[column] += value
			row['cache_cts'] = report.steps[-1]['cache'].get('auto_cts', 0) if report.steps else 0
			rows.append(row)
		return rows

	def baseline(self, m: int, k: int) -> list:
		report, _ = self.run(m, k)
		stateless, _ = self.run(m, k, pipeline=StatelessGeneration)
		rows = []
		for point in [value for value in SWEEP_K if value <= k] or [k]:
			row = {'k': point}
			for field in (CounterField.MULT_CIPHER.value, CounterField.ROTATE.value):
				cached = report.cumulative(field)[point - 1]
				full = stateless.cumulative(field)[point - 1]
				row[field] = cached
				row[f'stateless_{field}'] = full
				row[f'{field}_ratio'] = round(full / cached, 3) if cached else None
			rows.append(row)
		return rows
