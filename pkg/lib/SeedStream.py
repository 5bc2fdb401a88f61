import os
import hashlib
import logging

from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, List, Optional, Sequence, TypeVar

import numpy as np

from .Errors import ValidationError

logger = logging.getLogger(__name__)

DEFAULT_SEED = 0xC0FFEE
DEFAULT_CHUNKS = 16
THREADS_ENV_VAR = 'WELLROUND_THREADS'

Result = TypeVar('Result')


def _label_entropy(labels: Sequence[Any]) -> List[int]:
    return [int(hashlib.md5(str(label).encode('utf-8')).hexdigest()[:16], 16) for label in labels]


def seed_sequence(seed: int, *labels: Any) -> np.random.SeedSequence:
    if seed < 0 or seed >= 2 ** 64:
        raise ValidationError(f"Seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.SeedSequence([int(seed), *_label_entropy(labels)])


def generator_for(seed: int, *labels: Any) -> np.random.Generator:
    """An independent generator for one named purpose under a run seed."""
    return np.random.default_rng(seed_sequence(seed, *labels))


def chunk_sizes(total: int, n_chunks: int = DEFAULT_CHUNKS) -> List[int]:
    if total < 0 or n_chunks < 1:
        raise ValidationError(f"Cannot split {total} samples into {n_chunks} chunks")
    base, extra = divmod(total, n_chunks)
    return [base + (1 if i < extra else 0) for i in range(n_chunks)]


def chunk_generators(seed: int, n_chunks: int, *labels: Any) -> List[np.random.Generator]:
    children = seed_sequence(seed, *labels).spawn(n_chunks)
    return [np.random.default_rng(child) for child in children]


def resolve_threads(threads: Optional[int] = None) -> int:
    env_value = os.environ.get(THREADS_ENV_VAR)
    if env_value:
        try:
            threads = int(env_value)
        except ValueError:
            raise ValidationError(f"{THREADS_ENV_VAR} must be an integer, got {env_value!r}")
    if threads is None:
        threads = os.cpu_count() or 1
    if threads < 1:
        raise ValidationError(f"Thread count must be positive, got {threads}")
    return threads


def map_ordered(work: Callable[..., Result], *iterables: Sequence[Any], threads: int = 1) -> List[Result]:
    """Apply `work` across the iterables, in a thread pool when threads > 1; results keep input order."""
    if threads <= 1 or len(iterables[0]) <= 1:
        return [work(*args) for args in zip(*iterables)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, *iterables))


def map_chunks(work: Callable[[int, np.random.Generator], Result], sizes: Sequence[int],
               generators: Sequence[np.random.Generator], threads: int = 1) -> List[Result]:
    """
    Run `work(size, rng)` for every chunk and return the results in chunk order.

    The chunk layout depends only on the seed and the sample count, so the thread count never
    changes what is computed.
    """
    if len(sizes) != len(generators):
        raise ValidationError("Every chunk needs its own generator")
    return map_ordered(work, sizes, generators, threads=threads)
