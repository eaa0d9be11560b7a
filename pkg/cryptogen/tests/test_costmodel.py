import pytest

from cryptogen.src.entity.constants import CellStatus, Method, Order, Stage
from cryptogen.src.entity.errors import DimensionError, UnknownMethod
from cryptogen.src.services.costmodel import (
	CostDims,
	attention_table,
	cost_table,
	cpmm_mult,
	cpvm_mult,
	fit_exponent,
	predict_attention_costs,
	predict_costs,
	quadratic_coefficient,
	reported_only,
)

REFERENCE = CostDims.reference


@pytest.mark.parametrize('method,stage,metric,value', [
	(Method.GAZELLE.value, Stage.PREFILL.value, 'mult', 98304),
	(Method.IRON.value, Stage.PREFILL.value, 'mult', 768),
	(Method.BOLT.value, Stage.PREFILL.value, 'mult', 768),
	(Method.CRYPTOGEN.value, Stage.PREFILL.value, 'mult', 768),
	(Method.CRYPTOGEN.value, Stage.PREFILL.value, 'ct', 12),
	(Method.CRYPTOGEN.value, Stage.GEN.value, 'mult', 320),
	(Method.CRYPTOGEN.value, Stage.GEN.value, 'ct', 5),
	(Method.CRYPTOGEN.value, Stage.TOTAL.value, 'mult', 1088),
])
def test_reference_cells(method, stage, metric, value):
	triple = predict_costs(method, stage, **REFERENCE)
	assert getattr(triple, metric) == value
	assert triple.status(metric) == CellStatus.REPRODUCED.value


def test_reported_only_cells_are_listed():
	cells = {(row['method'], row['stage'], row['metric']) for row in reported_only()}
	assert (Method.GAZELLE.value, Stage.PREFILL.value, 'rot') in cells
	assert (Method.CRYPTOGEN.value, Stage.PREFILL.value, 'mult') not in cells
	for row in reported_only():
		assert row['reported'] is not None
		assert row['reported'] != row['value']


def test_cost_table_shape():
	rows = cost_table(CostDims())
	assert len(rows) == 5 * 3 * 3
	assert {row['method'] for row in rows} == set(Method.values)
	assert all(row['formula'] for row in rows)


def test_other_dims_have_no_reported_values():
	rows = cost_table(CostDims(m=64, d1=512, d2=64, n=4096, k=3))
	assert {row['status'] for row in rows} == {CellStatus.FORMULA.value}
	assert not reported_only(CostDims(m=64, d1=512, d2=64, n=4096, k=3))


def test_density():
	triple = predict_costs(Method.CRYPTOGEN.value, Stage.PREFILL.value, **REFERENCE, density=32)
	assert triple.mult == cpmm_mult(128, 768, 64, 8192, density=32) == 1536
	assert triple.ct == 24
	assert triple.status('mult') == CellStatus.FORMULA.value


def test_kernel_counts():
	assert cpmm_mult(128, 768, 64, 8192) == 768
	assert cpmm_mult(8, 32, 8, 64) == 32
	assert cpvm_mult(8) == 9
	assert cpvm_mult(12) == 17


def test_predictions_are_pure():
	first = predict_costs(Method.BOLT.value, Stage.GEN.value, **REFERENCE)
	second = predict_costs(Method.BOLT.value, Stage.GEN.value, **REFERENCE)
	assert first == second
	assert first.mult == 5 * predict_costs(Method.BOLT.value, Stage.PREFILL.value, **REFERENCE).mult


def test_dims_parse():
	dims = CostDims.parse('16,32,8,64,3')
	assert dims.as_dict() == {'m': 16, 'd1': 32, 'd2': 8, 'n': 64, 'k': 3, 'density': 4}
	for text in ('1,2,3', 'a,b,c,d,e', '0,32,8,64,3', '16,32,8,64,-1'):
		with pytest.raises(DimensionError):
			CostDims.parse(text)


def test_unknown_method():
	with pytest.raises(UnknownMethod):
		predict_costs('Cheetah', Stage.PREFILL.value, **REFERENCE)


def test_attention_orders():
	assert predict_attention_costs(Method.CRYPTOGEN.value, Stage.GEN.value) == {
		'rot_order': Order.LOG_D.value, 'ctct_order': Order.K.value,
	}
	assert predict_attention_costs(Method.BOLT.value, Stage.GEN.value)['ctct_order'] == Order.K2.value
	assert predict_attention_costs(Method.THOR.value, Stage.PREFILL.value)['ctct_order'] == Order.M2.value
	with pytest.raises(UnknownMethod):
		predict_attention_costs('Cheetah', Stage.GEN.value)


def test_linear_only_methods_have_no_attention_order():
	for method in (Method.GAZELLE.value, Method.IRON.value):
		for stage in (Stage.PREFILL.value, Stage.GEN.value):
			assert predict_attention_costs(method, stage) == {'rot_order': Order.NA.value, 'ctct_order': Order.NA.value}
	rows = attention_table()
	assert len(rows) == 5 * 2
	linear_only = {row['method'] for row in rows if row['ctct_order'] == Order.NA.value}
	assert linear_only == {Method.GAZELLE.value, Method.IRON.value}


def test_fit_exponent():
	xs = [8, 16, 32, 64]
	assert fit_exponent(xs, [3 * x for x in xs]) == pytest.approx(1.0)
	assert fit_exponent(xs, [x * x for x in xs]) == pytest.approx(2.0)


def test_quadratic_coefficient():
	xs = list(range(1, 65))
	assert abs(quadratic_coefficient(xs, [5 * x + 7 for x in xs])) < 1e-9
	assert quadratic_coefficient(xs, [x * (x + 1) // 2 for x in xs]) > 1e-4
