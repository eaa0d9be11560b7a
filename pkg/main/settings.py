# Generated by 'django-spinproject', based on Django 2.1.2.
#
# For more information on this file, see
# https://docs.djangoproject.com/en/2.1/topics/settings/
#
# For the full list of settings and their values, see
# https://docs.djangoproject.com/en/2.1/ref/settings/

import environ
env = environ.Env(
	DJANGO_DEBUG=(bool, False),  # casting, default value
	DJANGO_SECRET_KEY=(str, 'cryptogen-emulation'),
	DJANGO_DATABASE_URL=(str, 'sqlite://:memory:'),
	CRYPTOGEN_LOG=(str, 'INFO'),
	CRYPTOGEN_N_SLOTS=(int, 8192),
	CRYPTOGEN_INITIAL_NOISE_BUDGET=(int, 190),
	CRYPTOGEN_REFRESH_THRESHOLD=(int, 60),
	CRYPTOGEN_FRACTION_BITS=(int, 10),
	CRYPTOGEN_RECIPROCAL_ITERATIONS=(int, 4),
	CRYPTOGEN_INV_SQRT_ITERATIONS=(int, 3),
	CRYPTOGEN_SEED=(int, 0),
	CRYPTOGEN_TOY_MODEL=(str, ''),
)
environ.Env.read_env()

import os

SECRET_KEY = env('DJANGO_SECRET_KEY')
DEBUG = env('DJANGO_DEBUG')
ALLOWED_HOSTS = []


# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Database
# Данные хранятся в файлах, БД нужна только для запуска manage.py

DATABASES = {
	'default': env.db('DJANGO_DATABASE_URL'),
}


# Application definition

INSTALLED_APPS = [
	'cryptogen',
	'rest_framework',

	'django.contrib.auth',
	'django.contrib.contenttypes',
]


# Internationalization
# https://docs.djangoproject.com/en/2.1/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'Europe/Moscow'

USE_I18N = True

USE_L10N = True

USE_TZ = True


# Logging

LOGGING = {
	'version': 1,
	'disable_existing_loggers': False,
	'formatters': {
		'stamp': {
			'format': '%(asctime)s %(name)s %(module)s [%(levelname)s] %(message)s'
		},
	},
	'handlers': {
		'console': {
			'class': 'logging.StreamHandler',
			'formatter': 'stamp',
		},
	},
	'loggers': {
		'main': {
			'handlers': ['console'],
			'level': 'DEBUG',
		},
		'cryptogen': {
			'handlers': ['console'],
			'level': env('CRYPTOGEN_LOG').upper(),
			'propagate': False,
		},
	},
}


## Эмуляция

CRYPTOGEN = {
	'N_SLOTS': env('CRYPTOGEN_N_SLOTS'),
	'INITIAL_NOISE_BUDGET': env('CRYPTOGEN_INITIAL_NOISE_BUDGET'),
	'NOISE_COSTS': {
		'mult_plain': 20,
		'mult_cipher': 40,
		'rotate': 2,
		'add': 0,
		'add_plain': 0,
	},
	'REFRESH_THRESHOLD': env('CRYPTOGEN_REFRESH_THRESHOLD'),
	'FRACTION_BITS': env('CRYPTOGEN_FRACTION_BITS'),
	'RECIPROCAL_ITERATIONS': env('CRYPTOGEN_RECIPROCAL_ITERATIONS'),
	'INV_SQRT_ITERATIONS': env('CRYPTOGEN_INV_SQRT_ITERATIONS'),
	'SEED': env('CRYPTOGEN_SEED'),
	'TOY_MODEL': env('CRYPTOGEN_TOY_MODEL') or os.path.join(BASE_DIR, 'cryptogen', 'fixtures', 'toy_model.json'),
}
