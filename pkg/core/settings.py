"""
Django settings for the moebal project.

The project has no web surface; Django provides the management-command CLI,
form validation for experiment configs and the test runner. Lab settings come
from the environment or a `.env` file.
"""

from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = config('DJANGO_SECRET_KEY', default='moebal-local-only-not-secret')

DEBUG = config('DJANGO_DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'moe',
    'lab',
]

# No database: runs are files on disk.
DATABASES = {}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

USE_TZ = True
TIME_ZONE = 'UTC'


# Lab settings

# Cap on parallel sweep jobs
MOEBAL_THREADS = config('MOEBAL_THREADS', default=1, cast=int)

# NaN/Inf assertion in autodiff; switch off for timed runs
MOEBAL_CHECK_FINITE = config('MOEBAL_CHECK_FINITE', default=True, cast=bool)

MOEBAL_OUTPUT_ROOT = Path(config('MOEBAL_OUTPUT_ROOT', default=str(BASE_DIR / 'runs')))

MOEBAL_LOG_LEVEL = config('MOEBAL_LOG_LEVEL', default='INFO')


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'keyvalue': {
            'format': 'ts={asctime} level={levelname} logger={name} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'keyvalue',
        },
    },
    'loggers': {
        'moe': {'handlers': ['console'], 'level': MOEBAL_LOG_LEVEL, 'propagate': False},
        'lab': {'handlers': ['console'], 'level': MOEBAL_LOG_LEVEL, 'propagate': False},
    },
}
