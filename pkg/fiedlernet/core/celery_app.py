import structlog
from celery import Celery
from celery.signals import worker_process_init

from fiedlernet.config import settings
from fiedlernet.core.log import configure_logging

logger = structlog.get_logger()

celery_app = Celery(
    "fiedlernet",
    broker=settings.celery_broker_url,
    backend=settings.celery_result_backend,
    include=["fiedlernet.services.experiment_service"],
)

celery_app.conf.update(
    task_serializer="json",
    accept_content=["json"],
    result_serializer="json",
    result_expires=24 * 3600,
    timezone="UTC",
    enable_utc=True,
    task_track_started=True,
    # desk-scale MNIST runs take minutes, full presets hours
    task_time_limit=6 * 60 * 60,
    worker_prefetch_multiplier=1,
    worker_max_tasks_per_child=100,
    broker_connection_retry_on_startup=True,
    # without a broker every run executes in-process
    task_always_eager=settings.celery_always_eager,
    task_eager_propagates=False,
    task_routes={"fiedlernet.services.experiment_service.*": {"queue": "training"}},
)


@worker_process_init.connect
def _configure_worker_logging(**_):
    configure_logging()


logger.debug("Celery app configured", eager=settings.celery_always_eager, broker=settings.celery_broker_url)
