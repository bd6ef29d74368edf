import os
from dotenv import load_dotenv

load_dotenv()


class Settings:
    DATABASE_URL: str = os.getenv("DATABASE_URL", "sqlite:///./linewin_runs.db")
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    REPORT_DIR: str = os.getenv("REPORT_DIR", "./reports")
    RECORD_RUNS: bool = os.getenv("RECORD_RUNS", "true").lower() in ("1", "true", "yes")

    # Modified LSD defaults
    LSD_IMAGE_SCALE: float = float(os.getenv("LSD_IMAGE_SCALE", "0.5"))
    LSD_DENSITY_THRESHOLD: float = float(os.getenv("LSD_DENSITY_THRESHOLD", "0.6"))
    LSD_LENGTH_RATIO: float = float(os.getenv("LSD_LENGTH_RATIO", "0.125"))
    LSD_N_LAYERS: int = int(os.getenv("LSD_N_LAYERS", "2"))
    LSD_LAYER_RATIO: float = float(os.getenv("LSD_LAYER_RATIO", "0.5"))
    LSD_ANGLE_TOLERANCE_DEG: float = float(os.getenv("LSD_ANGLE_TOLERANCE_DEG", "22.5"))
    LSD_QUANT_TOLERANCE: float = float(os.getenv("LSD_QUANT_TOLERANCE", "2.0"))

    # Line matching gates
    MATCH_HAMMING_GATE: int = int(os.getenv("MATCH_HAMMING_GATE", "30"))
    MATCH_ANGLE_GATE: float = float(os.getenv("MATCH_ANGLE_GATE", "0.1"))

    # Sliding window back end
    SOLVER_MAX_ITERATIONS: int = int(os.getenv("SOLVER_MAX_ITERATIONS", "50"))
    SOLVER_TOL: float = float(os.getenv("SOLVER_TOL", "1e-8"))
    SOLVER_INITIAL_LAMBDA: float = float(os.getenv("SOLVER_INITIAL_LAMBDA", "1e-4"))
    WINDOW_CAPACITY: int = int(os.getenv("WINDOW_CAPACITY", "10"))


settings = Settings()
