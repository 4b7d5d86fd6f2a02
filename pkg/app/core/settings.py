import os

from dotenv import load_dotenv
from pydantic import BaseModel

load_dotenv()


class Settings(BaseModel):
    log_level: str = os.getenv("REPROCS_LOG_LEVEL", "INFO")
    max_workers: int = int(os.getenv("REPROCS_MAX_WORKERS", "1"))
    # sym_evd switches from cyclic Jacobi to LAPACK above this order
    jacobi_max_dim: int = int(os.getenv("REPROCS_JACOBI_MAX_DIM", "32"))
    pcp_window: int = int(os.getenv("REPROCS_PCP_WINDOW", "200"))


def get_settings() -> Settings:
    return Settings()
