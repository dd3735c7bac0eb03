from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="FIEDLER_", env_file=".env", extra="ignore")

    app_name: str = "FiedlerNet"
    app_version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"
    log_json: bool = False

    # Experiment outputs (reports, checkpoints, ledger)
    output_root: Path = Path("runs")
    database_url: str = "sqlite:///fiedlernet-ledger.db"

    # Celery runs eagerly in-process unless a real broker is configured
    celery_broker_url: str = "memory://"
    celery_result_backend: str = "cache+memory://"
    celery_always_eager: bool = True

    # Numerical caps
    dense_solver_max_n: int = 64
    edge_expansion_cap: int = 20

    api_host: str = "127.0.0.1"
    api_port: int = 8000
    allowed_origins: list = ["*"]


settings = Settings()
