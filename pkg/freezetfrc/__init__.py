import logging
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from freezetfrc.config import config

# Load environment variables
load_dotenv()

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def create_app(config_name: Optional[str] = None) -> Dict[str, Any]:
    """Settings factory.

    Resolves the configuration class by name (or from ``FREEZETFRC_ENV``) and
    returns its upper-case attributes as a plain dict, the same shape the
    services and orchestrator read their settings from.
    """
    if config_name is None:
        config_name = os.environ.get('FREEZETFRC_ENV', 'development')
    if config_name not in config:
        raise KeyError(f"Unknown configuration '{config_name}'")

    cfg_class = config[config_name]
    return {
        key: getattr(cfg_class, key)
        for key in dir(cfg_class)
        if key.isupper()
    }


def configure_logging(level: Optional[str] = None) -> None:
    """Configure root logging for entry points."""
    level_name = (level or os.environ.get('LOG_LEVEL') or 'INFO').upper()
    logging.basicConfig(level=getattr(logging, level_name, logging.INFO), format=LOG_FORMAT)


def create_celery_app(settings: Optional[Dict[str, Any]] = None):
    """Create Celery app."""
    settings = settings or create_app()

    from celery import Celery

    celery = Celery(
        'freezetfrc',
        broker=settings['CELERY_BROKER_URL'],
        backend=settings['CELERY_RESULT_BACKEND']
    )
    celery.conf.update(
        task_serializer=settings['CELERY_TASK_SERIALIZER'],
        result_serializer=settings['CELERY_RESULT_SERIALIZER'],
        accept_content=settings['CELERY_ACCEPT_CONTENT'],
        task_always_eager=settings['CELERY_TASK_ALWAYS_EAGER'],
        task_eager_propagates=True,
    )
    return celery
