"""
Django settings for the solverConfig project.

The project has no HTTP surface and no models: Django provides the settings layer,
the management command runner and the test runner for the ``fem`` kernel and the
``drivers`` app.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import os
from dotenv import load_dotenv
import sentry_sdk
from sentry_sdk.integrations.django import DjangoIntegration

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Load environment variables from the .env file next to manage.py
load_dotenv(os.path.join(BASE_DIR, '.env'))

# Environment configuration
ENV = os.getenv("ENV", "development")  # default to development
IS_PRODUCTION = ENV == "production"


def env_int(name, default):
    try:
        return int(os.getenv(name, default))
    except (TypeError, ValueError):
        return default


def env_float(name, default):
    try:
        return float(os.getenv(name, default))
    except (TypeError, ValueError):
        return default


# Sentry only when a DSN is configured; batch runs on a laptop stay offline.
SENTRY_DSN = os.getenv("SENTRY_DSN", "")
if SENTRY_DSN:
    sentry_sdk.init(
        dsn=SENTRY_DSN,
        integrations=[DjangoIntegration()],
        traces_sample_rate=env_float("SENTRY_TRACES_SAMPLE_RATE", 0.0),
        send_default_pii=False,
    )

SECRET_KEY = os.getenv('SECRET_KEY', 'django-insecure-femkernel-local-only')

DEBUG = os.getenv("DEBUG", "False") == "True" if IS_PRODUCTION else True

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    #local apps
    "fem",
    "drivers",
]

# No model is persisted; the in-memory database keeps Django's checks happy.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': ':memory:',
    }
}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# ---------------------------------------------------------------------------
# Finite element kernel
# ---------------------------------------------------------------------------

# Largest polytope dimension accepted by fem.polytope (the code is dimension generic).
FEM_MAX_DIMS = env_int("FEM_MAX_DIMS", 3)

# Systems above this size refuse the dense LU path.
FEM_DENSE_LU_CAP = env_int("FEM_DENSE_LU_CAP", 20000)

FEM_CG_RTOL = env_float("FEM_CG_RTOL", 1e-10)
FEM_CG_MAXITER = env_int("FEM_CG_MAXITER", 20000)

# Interior penalty: gamma = factor * (k + 1)**2, scaled by 1/|F| at assembly.
FEM_DG_PENALTY_FACTOR = env_float("FEM_DG_PENALTY_FACTOR", 10.0)

# Relative tolerance for matching facet quadrature points between neighbour cells.
FEM_GEOMETRY_TOL = env_float("FEM_GEOMETRY_TOL", 1e-10)

FEM_OUTPUT_DIR = Path(os.getenv("FEM_OUTPUT_DIR", BASE_DIR / 'output'))

# ---------------------------------------------------------------------------
# Logging
# ---------------------------------------------------------------------------
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'fem': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
        'drivers': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}
