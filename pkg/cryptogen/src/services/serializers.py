from rest_framework import serializers

from cryptogen.src.entity.backend import BackendParams
from cryptogen.src.entity.constants import CacheSegment, CounterField, EncodingKind, OpKind
from cryptogen.src.entity.errors import ParameterError
from cryptogen.src.entity.model import ModelConfig


class BackendParamsSerializer(serializers.Serializer):
	n_slots = serializers.IntegerField(min_value=2, required=False, default=8192)
	plain_modulus = serializers.IntegerField(min_value=2, required=False, allow_null=True, default=None)
	initial_noise_budget = serializers.IntegerField(min_value=0, required=False, default=190)
	noise_costs = serializers.DictField(child=serializers.IntegerField(min_value=0), required=False, default=dict)
	refresh_threshold = serializers.IntegerField(min_value=0, required=False, default=60)

	def validate_noise_costs(self, value):
		unknown = set(value) - set(OpKind.values)
		if unknown:
			raise serializers.ValidationError(f'Неизвестные операции: {", ".join(sorted(unknown))}')
		return value

	def validate(self, attrs):
		try:
			attrs['params'] = BackendParams(**attrs)
		except ParameterError as e:
			raise serializers.ValidationError(str(e))
		return attrs

	def create(self, validated_data):
		return validated_data['params']


class ModelConfigSerializer(serializers.Serializer):
	layers = serializers.IntegerField(min_value=1)
	hidden = serializers.IntegerField(min_value=1)
	heads = serializers.IntegerField(min_value=1)
	ffn_dim = serializers.IntegerField(min_value=1)
	vocab = serializers.IntegerField(min_value=2)
	max_seq = serializers.IntegerField(min_value=1)
	frac_bits = serializers.IntegerField(min_value=1, required=False, default=10)

	def validate(self, attrs):
		if attrs['hidden'] % attrs['heads']:
			raise serializers.ValidationError('hidden должен делиться на heads')
		return attrs

	def create(self, validated_data):
		return ModelConfig(**validated_data)


class WeightsInitSerializer(serializers.Serializer):
	seed = serializers.IntegerField(min_value=0)


class ModelManifestSerializer(serializers.Serializer):
	"""Манифест модели: конфигурация и либо файлы весов, либо зерно генерации"""
	config = ModelConfigSerializer()
	modulus = serializers.IntegerField(min_value=2, required=False)
	weights = serializers.DictField(child=serializers.CharField(), required=False)
	init = WeightsInitSerializer(required=False)

	def validate(self, attrs):
		if 'weights' not in attrs and 'init' not in attrs:
			raise serializers.ValidationError('Нужно указать weights или init')
		if 'weights' in attrs and 'modulus' not in attrs:
			raise serializers.ValidationError('Для файлов весов нужен modulus')
		return attrs

	def create(self, validated_data):
		return {
			'config': ModelConfig(**validated_data['config']),
			'modulus': validated_data.get('modulus'),
			'weights': validated_data.get('weights'),
			'init': validated_data.get('init'),
		}


class EncodingSerializer(serializers.Serializer):
	kind = serializers.ChoiceField(choices=EncodingKind.choices)
	rows = serializers.IntegerField(min_value=0)
	cols = serializers.IntegerField(min_value=1)
	block_size = serializers.IntegerField(min_value=1)
	block_width = serializers.IntegerField(min_value=0)


class CacheSegmentSerializer(serializers.Serializer):
	encoding = EncodingSerializer()
	file = serializers.CharField()
	budgets = serializers.ListField(child=serializers.IntegerField(min_value=0))


class RefreshEventSerializer(serializers.Serializer):
	step = serializers.IntegerField(min_value=0)
	segment = serializers.ChoiceField(choices=CacheSegment.choices)
	part_id = serializers.IntegerField(min_value=0)
	budget_before = serializers.IntegerField(min_value=0)
	mpc_bytes = serializers.IntegerField(min_value=0)
	forced = serializers.BooleanField(required=False, default=False)


class CacheManifestSerializer(serializers.Serializer):
	head_dim = serializers.IntegerField(min_value=1)
	block = serializers.IntegerField(min_value=1)
	n_slots = serializers.IntegerField(min_value=2)
	modulus = serializers.IntegerField(min_value=2)
	segments = serializers.DictField(child=CacheSegmentSerializer())
	refresh_log = RefreshEventSerializer(many=True)

	def validate_segments(self, value):
		unknown = set(value) - set(CacheSegment.values)
		if unknown:
			raise serializers.ValidationError(f'Неизвестные сегменты: {", ".join(sorted(unknown))}')
		for required in (CacheSegment.AUTO_K.value, CacheSegment.AUTO_V.value):
			if required not in value:
				raise serializers.ValidationError(f'Нет сегмента {required}')
		return value

	def create(self, validated_data):
		return validated_data


class CounterSerializer(serializers.Serializer):
	mult_plain = serializers.IntegerField()
	mult_cipher = serializers.IntegerField()
	rotate = serializers.IntegerField()
	add = serializers.IntegerField()
	add_plain = serializers.IntegerField()
	encrypt = serializers.IntegerField()
	decrypt = serializers.IntegerField()
	refresh_events = serializers.IntegerField()
	mpc_bytes = serializers.IntegerField()

	def to_representation(self, instance):
		if hasattr(instance, 'as_dict'):
			instance = instance.as_dict()
		return {name: int(instance.get(name, 0)) for name in CounterField.values}


class StepReportSerializer(serializers.Serializer):
	step = serializers.IntegerField()
	token = serializers.IntegerField(allow_null=True)
	counters = CounterSerializer()
	breakdown = serializers.DictField(child=CounterSerializer())
	cache = serializers.DictField(child=serializers.IntegerField())
	mpc_rounds = serializers.IntegerField()


class RunReportSerializer(serializers.Serializer):
	prompt = serializers.ListField(child=serializers.IntegerField())
	tokens = serializers.ListField(child=serializers.IntegerField())
	params = serializers.DictField()
	prefill = StepReportSerializer()
	steps = StepReportSerializer(many=True)
	totals = CounterSerializer()
	refresh_events = RefreshEventSerializer(many=True)


class CostRowSerializer(serializers.Serializer):
	method = serializers.CharField()
	stage = serializers.CharField()
	metric = serializers.CharField()
	formula = serializers.CharField()
	value = serializers.IntegerField(allow_null=True)
	reported = serializers.IntegerField(allow_null=True)
	status = serializers.CharField()


class ValidationItemSerializer(serializers.Serializer):
	check = serializers.CharField()
	expected = serializers.FloatField(allow_null=True)
	measured = serializers.FloatField(allow_null=True)
	passed = serializers.BooleanField()
	detail = serializers.CharField(allow_blank=True)


class ValidationReportSerializer(serializers.Serializer):
	passed = serializers.BooleanField()
	items = ValidationItemSerializer(many=True)
	skipped = serializers.ListField(child=serializers.CharField())
