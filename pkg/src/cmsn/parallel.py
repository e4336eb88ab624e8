"""Process-based worker pool for structure-parallel training.

Networks within a stage (and committee/bank members) are independent jobs:
each is a pure function of its seed and the shared dataset, so results are
identical however many workers execute them.  BLAS threading is pinned to
one thread inside every map so (a) models are bit-identical across worker
counts and (b) measured speedups reflect the pool alone, not library
threads competing with it.
"""

import multiprocessing
import os
from concurrent.futures import ProcessPoolExecutor

from threadpoolctl import threadpool_limits


def machine_cores():
    return os.cpu_count() or 1


class WorkerPool:
    """Order-preserving map over independent jobs.

    ``workers=1`` runs serially in-process; more workers fork a process
    pool.  Job functions and arguments must be picklable (module-level
    functions, dataclasses, ndarrays).
    """

    def __init__(self, workers=1):
        if workers < 1:
            raise ValueError("worker count must be >= 1")
        self.workers = int(workers)

    def map(self, fn, jobs):
        jobs = list(jobs)
        with threadpool_limits(limits=1):
            if self.workers == 1 or len(jobs) <= 1:
                return [fn(job) for job in jobs]
            ctx = multiprocessing.get_context("fork")
            with ProcessPoolExecutor(max_workers=self.workers, mp_context=ctx) as ex:
                return list(ex.map(fn, jobs, chunksize=1))

    def __repr__(self):
        return f"WorkerPool(workers={self.workers})"
