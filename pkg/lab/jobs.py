"""
Independent sweep members as parallel jobs. Every job writes to its own run
directory, so results do not depend on how many jobs run at once.
"""

import logging
from concurrent.futures import ProcessPoolExecutor

import django
from django.conf import settings

logger = logging.getLogger(__name__)


def job_threads(requested=None):
    cap = max(1, int(getattr(settings, 'MOEBAL_THREADS', 1)))
    return cap if requested is None else max(1, min(int(requested), cap))


def run_jobs(fn, arg_list, threads=None):
    """`[fn(*args) for args in arg_list]`, possibly across processes, in order."""
    arg_list = list(arg_list)
    threads = job_threads(threads)
    if threads == 1 or len(arg_list) <= 1:
        results = []
        for args in arg_list:
            results.append(fn(*args))
            logger.info('job done %d/%d', len(results), len(arg_list))
        return results
    with ProcessPoolExecutor(max_workers=threads, initializer=django.setup) as pool:
        futures = [pool.submit(fn, *args) for args in arg_list]
        results = [future.result() for future in futures]
    logger.info('jobs done count=%d threads=%d', len(results), threads)
    return results
