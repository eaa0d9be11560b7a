import csv
import io
import json

import pytest
from django.core.management import CommandError, call_command

from cryptogen.management.commands import verify
from cryptogen.management.commands.bench import step_header
from cryptogen.src.entity.fixed_point import GELU_COEFFS
from cryptogen.src.services.model_store import load_model

TOY = ['--slots', '64']


def run(name, *args) -> str:
	out = io.StringIO()
	call_command(name, *args, stdout=out)
	return out.getvalue()


def test_costs_markdown():
	content = run('costs')
	assert content.startswith('| method | stage | metric |')
	assert '| CryptoGen | Prefill | mult |' in content
	assert 'reported-only' in content
	assert 'O(log d)' in content
	assert '| Gazelle | Gen | n/a | n/a |' in content


def test_costs_csv():
	rows = list(csv.DictReader(io.StringIO(run('costs', '--format', 'csv'))))
	assert len(rows) == 45
	assert list(rows[0]) == ['method', 'stage', 'metric', 'formula', 'value', 'reported', 'status']


def test_costs_json(tmp_path):
	path = tmp_path / 'costs.json'
	run('costs', '--format', 'json', '--method', 'CryptoGen', '--out', str(path))
	data = json.loads(path.read_text())
	assert data['dims']['density'] == 64
	assert {row['method'] for row in data['costs']} == {'CryptoGen'}
	cell = next(row for row in data['costs'] if row['stage'] == 'Prefill' and row['metric'] == 'mult')
	assert cell['value'] == 768


def test_costs_usage_errors():
	with pytest.raises(CommandError) as e:
		run('costs', '--method', 'Cheetah')
	assert e.value.returncode == 2
	with pytest.raises(CommandError) as e:
		run('costs', '--dims', '1,2')
	assert e.value.returncode == 2


def test_fit_gelu():
	data = json.loads(run('fit_gelu'))
	assert data['max_error'] <= data['tolerance']
	assert len(data['coefficients']) == 4
	with pytest.raises(CommandError) as e:
		run('fit_gelu', '--points', '2')
	assert e.value.returncode == 2


def test_verify_passes():
	data = json.loads(run('verify', *TOY, '--prefill', '4', '--gen', '3', '--seed', '7'))
	assert data['passed'] is True
	assert data['runs'][0]['match'] is True
	assert len(data['runs'][0]['tokens']) == 3
	assert all(cell['expected'] == cell['value'] for cell in data['table'])


def test_verify_gates_integer_gelu(monkeypatch):
	data = json.loads(run('verify', *TOY, '--prefill', '2', '--gen', '2'))
	assert data['gelu']['coefficients'] == list(GELU_COEFFS)
	assert 0 < data['gelu']['max_error'] <= data['gelu']['tolerance']
	monkeypatch.setattr(verify, 'gelu_kernel_error', lambda fp: 1.0)
	with pytest.raises(CommandError) as e:
		run('verify', *TOY, '--prefill', '2', '--gen', '2')
	assert e.value.returncode == 1


def test_verify_is_deterministic():
	args = (*TOY, '--prefill', '4', '--gen', '3', '--seed', '7', '--transcript')
	first, second = json.loads(run('verify', *args)), json.loads(run('verify', *args))
	assert first['runs'] == second['runs']
	assert first['runs'][0]['transcript']['messages']


def test_bench_columns(tmp_path):
	transcript = tmp_path / 'transcript.json'
	rows = list(csv.DictReader(io.StringIO(
		run('bench', *TOY, '--prefill', '4', '--gen', '3', '--transcript', str(transcript))
	)))
	assert list(rows[0]) == step_header()
	assert [int(row['step']) for row in rows] == [0, 1, 2]
	assert int(rows[-1]['cache_cts']) == 1
	assert int(rows[1]['ctct.mult_cipher']) > 0
	assert json.loads(transcript.read_text())['messages']


def test_bench_baseline():
	rows = list(csv.DictReader(io.StringIO(run('bench', *TOY, '--prefill', '2', '--gen', '8', '--baseline'))))
	assert [int(row['k']) for row in rows] == [8]
	assert float(rows[0]['mult_cipher_ratio']) > 1


def test_bench_sweep_m():
	rows = list(csv.DictReader(io.StringIO(run('bench', *TOY, '--gen', '3', '--sweep', 'm'))))
	assert [int(row['m']) for row in rows] == [16, 32, 64]
	assert len({row['mult_cipher'] for row in rows}) == 1


def test_make_toy_model(tmp_path):
	args = ['--layers', '1', '--hidden', '8', '--heads', '2', '--ffn-dim', '16', '--vocab', '12', '--max-seq', '16']
	path = run('make_toy_model', '--out', str(tmp_path), '--seed', '3', *args).strip()
	model = load_model(path)
	assert model.config.hidden == 8
	data = json.loads(run('verify', *TOY, '--model', path, '--prefill', '3', '--gen', '2'))
	assert data['passed'] is True


def test_corrupted_model(tmp_path):
	path = tmp_path / 'model.json'
	path.write_text('{"config": {}}')
	with pytest.raises(CommandError) as e:
		run('verify', *TOY, '--model', str(path))
	assert e.value.returncode == 2
