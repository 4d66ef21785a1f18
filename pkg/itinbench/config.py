from pathlib import Path


def get_base_dir() -> Path:
    """The repository root, where data/ and runs/ live."""
    return Path(__file__).parent.parent


class Config:
    # Service settings
    HOST: str = "127.0.0.1"
    PORT: int = 2549

    # Geometry
    EARTH_RADIUS_KM: float = 6371.0088  # IUGG mean radius

    # Solver limits
    NODE_CAP: int = 20  # Held-Karp memory grows as 2^n * n
    DAY_ROUTE_CAP: int = 8  # Exhaustive single-day permutations (8! states)
    OPTIMALITY_RTOL: float = 1e-9

    # Preference filtering
    GOOD_RATING: int = 4  # "good or excellent" on 1-5 scales
    ORIENTATION_LEVEL: int = 2  # "medium" tendency on the 0-3 scale
    RESTAURANT_LIMIT: int = 500

    # Metrics
    MACRO_THRESHOLD: float = 0.75
    DAILY_QUOTA: int = 4

    # Clustering
    CLUSTER_DIVISOR: int = 5
    KMEANS_MAX_ITER: int = 300

    # Agent loop
    STEP_LIMIT: int = 30
    DEAD_LOOP_REPEATS: int = 3
    MAX_CYCLE_LENGTH: int = 4
    CONTEXT_LIMIT_BYTES: int = 400_000
    CHAT_TIMEOUT: float = 120.0  # Seconds per completion request

    # Paths - computed at import time
    BASE_DIR: Path = get_base_dir()
    DATA_DIR: Path = BASE_DIR / "data"
    EXAMPLE_CONFIG_FILE: Path = DATA_DIR / "itinbench.example.json"
    OUTPUT_DIR: Path = BASE_DIR / "runs"


config = Config()
