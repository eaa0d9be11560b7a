import numpy as np
import pytest
from django.conf import settings

from cryptogen.src.entity.backend import BackendParams, new_context
from cryptogen.src.entity.fixed_point import FixedPointParams
from cryptogen.src.services.model_store import load_model
from cryptogen.src.services.nonlinear import MpcChannel

TOY_SLOTS = 64


def new_session(n_slots: int = TOY_SLOTS, seed: int = 0, **params):
	ctx = new_context(BackendParams(n_slots=n_slots, **params))
	return ctx, MpcChannel(modulus=ctx.p, seed=seed, counter=ctx.counter)


@pytest.fixture
def session():
	"""Фабрика пары (контекст, канал) для прогонов генерации"""
	return new_session


@pytest.fixture
def params():
	return BackendParams(n_slots=TOY_SLOTS)


@pytest.fixture
def ctx(params):
	return new_context(params)


@pytest.fixture
def channel(ctx):
	return MpcChannel(modulus=ctx.p, seed=7, counter=ctx.counter)


@pytest.fixture
def fp(ctx):
	return FixedPointParams(modulus=ctx.p, frac_bits=10)


@pytest.fixture
def rng():
	return np.random.default_rng(12345)


@pytest.fixture(scope='session')
def toy_model():
	return load_model(settings.CRYPTOGEN['TOY_MODEL'])
