import os


class Config:
    """Base configuration class."""
    # Transport
    SEGMENT_SIZE = int(os.environ.get('SEGMENT_SIZE', 500))
    T_MBI = float(os.environ.get('T_MBI', 64.0))
    RTT_EWMA_Q = float(os.environ.get('RTT_EWMA_Q', 0.9))
    INITIAL_T_RTO = float(os.environ.get('INITIAL_T_RTO', 2.0))
    CONTROL_PACKET_SIZE = int(os.environ.get('CONTROL_PACKET_SIZE', 40))

    # Freeze signalling
    OPTION_REPEAT = int(os.environ.get('OPTION_REPEAT', 3))
    OPTION_THINNING = int(os.environ.get('OPTION_THINNING', 1))  # 1 = every packet
    IDLE_TIMEOUT = float(os.environ.get('IDLE_TIMEOUT', 480.0))
    MAX_DISCONNECTION = float(os.environ.get('MAX_DISCONNECTION', 300.0))

    # Topology
    QUEUE_CAPACITY = int(os.environ.get('QUEUE_CAPACITY', 50))
    WIRED_CAPACITY = float(os.environ.get('WIRED_CAPACITY', 100e6))
    WIRED_DELAY = float(os.environ.get('WIRED_DELAY', 0.001))

    # Measurement
    STATIONARITY_WINDOW = float(os.environ.get('STATIONARITY_WINDOW', 30.0))
    STATIONARITY_TOLERANCE = float(os.environ.get('STATIONARITY_TOLERANCE', 0.05))
    STATIONARITY_MAX_TIME = float(os.environ.get('STATIONARITY_MAX_TIME', 600.0))
    HANDOVER_JITTER_RTTS = float(os.environ.get('HANDOVER_JITTER_RTTS', 4.0))
    SETTLEMENT_THRESHOLD = float(os.environ.get('SETTLEMENT_THRESHOLD', 0.10))
    SETTLEMENT_CAP = float(os.environ.get('SETTLEMENT_CAP', 100.0))
    FAIRNESS_WINDOW = float(os.environ.get('FAIRNESS_WINDOW', 100.0))
    FAIRNESS_SETTLE = float(os.environ.get('FAIRNESS_SETTLE', 10.0))
    RATE_BIN_WIDTH = float(os.environ.get('RATE_BIN_WIDTH', 1.0))
    RUNS_PER_CELL = int(os.environ.get('RUNS_PER_CELL', 20))

    # Output
    OUTPUT_DIR = os.environ.get('FREEZETFRC_OUTPUT_DIR') or './results'

    # Sweep execution
    SWEEP_JOBS = int(os.environ.get('SWEEP_JOBS', 1))
    SWEEP_EXECUTOR = os.environ.get('SWEEP_EXECUTOR', 'local')

    # Celery
    CELERY_BROKER_URL = os.environ.get('CELERY_BROKER_URL') or 'redis://localhost:6379/0'
    CELERY_RESULT_BACKEND = os.environ.get('CELERY_RESULT_BACKEND') or 'redis://localhost:6379/0'
    CELERY_TASK_SERIALIZER = 'json'
    CELERY_RESULT_SERIALIZER = 'json'
    CELERY_ACCEPT_CONTENT = ['json']
    CELERY_TASK_ALWAYS_EAGER = False

    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'INFO')


class DevelopmentConfig(Config):
    """Development configuration."""
    DEBUG = True
    LOG_LEVEL = os.environ.get('LOG_LEVEL', 'DEBUG')


class ProductionConfig(Config):
    """Production configuration."""
    DEBUG = False
    SWEEP_JOBS = int(os.environ.get('SWEEP_JOBS', os.cpu_count() or 1))


class TestingConfig(Config):
    """Testing configuration."""
    TESTING = True
    CELERY_TASK_ALWAYS_EAGER = True
    CELERY_BROKER_URL = 'memory://'
    CELERY_RESULT_BACKEND = 'cache+memory://'
    STATIONARITY_WINDOW = 5.0
    STATIONARITY_TOLERANCE = 0.10
    STATIONARITY_MAX_TIME = 120.0
    SETTLEMENT_CAP = 30.0
    FAIRNESS_WINDOW = 30.0
    FAIRNESS_SETTLE = 5.0
    RUNS_PER_CELL = 2
    OUTPUT_DIR = '/tmp/freezetfrc_test_results'


config = {
    'development': DevelopmentConfig,
    'production': ProductionConfig,
    'testing': TestingConfig,
    'default': DevelopmentConfig
}
