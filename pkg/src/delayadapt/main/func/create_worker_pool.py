# Worker pool for folds, scenarios and grid points
# contributor: smlee

# History
# 2025-02-10 | v3.0 - joblib worker pool replaces the database connection pool
# 2024-06-02 | v2.0 - refactored and added Singleton pattern
# 2024-03-27 | v1.0 - first commit

# Python module
import os
from typing import Callable, Iterable, List, Optional, Any
import numpy as np
from joblib import Parallel, delayed
from dotenv import load_dotenv
load_dotenv()
from delayadapt.conf.errors import ConfigError

# Main
def resolve_jobs(jobs:Optional[int]=None) -> int:
    """Number of workers: explicit value, then DELAY_ADAPT_JOBS, then cpu count
    """
    if jobs is None:
        env = os.environ.get("DELAY_ADAPT_JOBS")
        if env:
            try:
                jobs = int(env)
            except ValueError:
                raise ConfigError(f"DELAY_ADAPT_JOBS must be an integer, got {env!r}")
        else:
            jobs = os.cpu_count() or 1
    if jobs < 1:
        raise ConfigError(f"jobs must be positive, got {jobs}")
    return jobs


def derive_seed(master_seed:int, index:int) -> int:
    """Independent 64-bit seed for job ``index`` under ``master_seed``
    """
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1, dtype=np.uint64)[0])


class WorkerPool:
    """Ordered map over a joblib pool

    Args:
        jobs: worker count, resolved by resolve_jobs
    Returns:
        results in submission order
    """

    def __init__(self, jobs:Optional[int]=None):
        self.jobs = resolve_jobs(jobs)

    def map(self, func:Callable[..., Any], items:Iterable[Any]) -> List[Any]:
        items = list(items)
        if self.jobs == 1 or len(items) <= 1:
            return [func(item) for item in items]
        return Parallel(n_jobs=min(self.jobs, len(items)))(delayed(func)(item) for item in items)
