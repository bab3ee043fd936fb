from concurrent.futures import ThreadPoolExecutor

from .noise import replicate_rng


def run_replicates(fn, replicates, seed, workers=1):
    """``[fn(replicate_rng(seed, i)) for i in range(replicates)]``, optionally threaded.

    Results come back in replicate order and each replicate owns its
    generator, so the output does not depend on ``workers``.
    """
    if workers is None or workers <= 1 or replicates < 2:
        return [fn(replicate_rng(seed, i)) for i in range(replicates)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda i: fn(replicate_rng(seed, i)), range(replicates)))
