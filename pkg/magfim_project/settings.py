"""
Django settings for magfim_project project.
"""

from pathlib import Path
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# 本工具只有命令行入口，没有对外的 Web 服务
SECRET_KEY = os.environ.get('SECRET_KEY', 'magfim-local-only-key')

DEBUG = os.environ.get('DEBUG', 'False').lower() == 'true'

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'magfim',
]


# Database
# 实验运行记录（ExperimentRun）保存在本地 SQLite 中

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': os.environ.get('MAGFIM_DB_PATH', BASE_DIR / 'db.sqlite3'),
    }
}

LANGUAGE_CODE = 'zh-hans'

TIME_ZONE = 'Asia/Shanghai'

USE_I18N = True

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# 缓存配置 - 文件缓存，用于保存基线几何的扫描结果
CACHES = {
    'default': {
        'BACKEND': 'django.core.cache.backends.filebased.FileBasedCache',
        'LOCATION': os.path.join(BASE_DIR, 'cache'),
        'TIMEOUT': None,
        'OPTIONS': {
            'MAX_ENTRIES': 1000,
        }
    }
}


# 磁偶极子与观测性分析默认参数
# 长度单位 m，磁场单位 µT，角度单位 rad
MAGFIM_B_T = float(os.environ.get('MAGFIM_B_T', '7.9666e-2'))  # µT·m³
MAGFIM_SIGMA_UT = float(os.environ.get('MAGFIM_SIGMA_UT', '10.0'))
MAGFIM_B_CLIP_UT = float(os.environ.get('MAGFIM_B_CLIP_UT', '1900.0'))
MAGFIM_SWEEP_SAMPLES = int(os.environ.get('MAGFIM_SWEEP_SAMPLES', '200000'))
MAGFIM_THREADS = int(os.environ.get('MAGFIM_THREADS', '0')) or os.cpu_count() or 1
MAGFIM_CACHE_TIMEOUT = None  # 基线扫描结果是确定性的，不过期

# 输出目录
MAGFIM_OUTPUT_DIR = Path(os.environ.get('MAGFIM_OUTPUT_DIR', BASE_DIR / 'outputs'))

LOG_DIR = BASE_DIR / 'logs'
LOG_DIR.mkdir(exist_ok=True)

# Logging Configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {process:d} {thread:d} {message}',
            'style': '{',
        },
        'simple': {
            'format': '{levelname} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': LOG_DIR / 'magfim.log',
            'formatter': 'verbose',
        },
        'console': {
            'level': os.environ.get('MAGFIM_CONSOLE_LOG_LEVEL', 'WARNING'),
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'root': {
        'handlers': ['console', 'file'],
        'level': 'INFO',
    },
    'loggers': {
        'django': {
            'handlers': ['console', 'file'],
            'level': 'INFO',
            'propagate': False,
        },
        'magfim': {
            'handlers': ['console', 'file'],
            'level': 'DEBUG',
            'propagate': False,
        },
    },
}
