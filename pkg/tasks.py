import logging
import time

from freezetfrc import create_app, create_celery_app
from experiment_orchestrator import run_fairness_cell, run_handover_cell

# Worker settings and Celery app
settings = create_app()
celery = create_celery_app(settings)

logger = logging.getLogger(__name__)


@celery.task(bind=True)
def handover_cell_task(self, from_tech, to_tech, variant, seed, x_ref):
    """Background task running one seeded handover simulation."""
    start_time = time.time()

    try:
        logger.info(f"Handover cell {variant} {from_tech}->{to_tech} seed={seed}")
        result = run_handover_cell(from_tech, to_tech, variant, seed, x_ref, settings)
        result['processing_time_seconds'] = round(time.time() - start_time, 2)
        logger.info(f"Handover cell completed: {result}")
        return result

    except Exception as e:
        logger.error(f"Error in handover_cell_task: {str(e)}")
        raise


@celery.task(bind=True)
def fairness_cell_task(self, from_tech, to_tech, variant, seed, x_ref=None):
    """Background task running one seeded fairness simulation."""
    start_time = time.time()

    try:
        logger.info(f"Fairness cell {variant} {from_tech}->{to_tech} seed={seed}")
        result = run_fairness_cell(from_tech, to_tech, variant, seed, x_ref, settings)
        result['processing_time_seconds'] = round(time.time() - start_time, 2)
        logger.info(f"Fairness cell completed: {result}")
        return result

    except Exception as e:
        logger.error(f"Error in fairness_cell_task: {str(e)}")
        raise


@celery.task
def model_matrix_task(check_oracle=True):
    """Evaluate the analytic model over the handover matrix."""
    from experiment_orchestrator import ExperimentOrchestrator

    try:
        df = ExperimentOrchestrator.run_model_matrix(settings, check_oracle=check_oracle)
        return df.to_dict(orient='records')
    except Exception as e:
        logger.error(f"Error in model_matrix_task: {str(e)}")
        raise
