"""
Thread fan-out helpers built on anyio.

The numerical work releases the GIL inside LAPACK/BLAS, so batch runs and boundary sweeps fan
out to worker threads from a short-lived event loop.
"""
import functools
from typing import Any, Awaitable, Callable, Coroutine, Optional, ParamSpec, Sequence, TypeVar

import anyio

T_Retval = TypeVar("T_Retval")  # pylint: disable=[invalid-name]
T_ParamSpec = ParamSpec("T_ParamSpec")  # pylint: disable=[invalid-name]

__all__ = [
    "gather_limited",
    "map_in_threads",
    "run",
    "run_async",
]


def run(
    async_function: Callable[T_ParamSpec, Coroutine[Any, Any, T_Retval]],
    backend: str = "asyncio",
) -> Callable[T_ParamSpec, T_Retval]:
    """
    Take an async function and create a regular (blocking) function that receives the
    same keyword and positional arguments, creates an event loop and runs the original
    `async_function` with those arguments.

    The current thread must not be already running an event loop.
    """

    @functools.wraps(async_function)
    def wrapper(*args: T_ParamSpec.args, **kwargs: T_ParamSpec.kwargs) -> T_Retval:
        partial_f = functools.partial(async_function, *args, **kwargs)
        return anyio.run(partial_f, backend=backend)

    return wrapper


def run_async(
    function: Callable[T_ParamSpec, T_Retval],
    *,
    limiter: Optional[anyio.CapacityLimiter] = None,
) -> Callable[T_ParamSpec, Awaitable[T_Retval]]:
    """
    Take a blocking function and create an async one that receives the same
    positional and keyword arguments, and that when called, calls the original function
    in a worker thread using `anyio.to_thread.run_sync()`.

    `limiter` bounds the number of threads running at once (the anyio default limiter is used
    when omitted).
    """

    async def wrapper(*args: T_ParamSpec.args, **kwargs: T_ParamSpec.kwargs) -> T_Retval:
        partial_f = functools.partial(function, *args, **kwargs)
        return await anyio.to_thread.run_sync(partial_f, limiter=limiter)

    return wrapper


async def gather_limited(calls: Sequence[Callable[[], Awaitable[T_Retval]]], limit: int = 3) -> list[T_Retval]:
    """Like asyncio.gather but with a limit on concurrency.

    Results are returned in the order of ``calls`` whatever the completion order.
    """
    semaphore = anyio.Semaphore(max(1, limit))
    results: list[Any] = [None] * len(calls)

    async def _execute(index: int, call: Callable[[], Awaitable[T_Retval]]) -> None:
        async with semaphore:
            results[index] = await call()

    async with anyio.create_task_group() as tg:
        for index, call in enumerate(calls):
            tg.start_soon(_execute, index, call)
    return results


def map_in_threads(function: Callable[..., T_Retval], items: Sequence[Any], limit: int = 1) -> list[T_Retval]:
    """
    Applies ``function`` to every item, using up to ``limit`` worker threads.

    With ``limit == 1`` the items are processed in the calling thread, in order.
    """
    if limit <= 1 or len(items) <= 1:
        return [function(item) for item in items]

    async def _main() -> list[T_Retval]:
        limiter = anyio.CapacityLimiter(limit)
        threaded = run_async(function, limiter=limiter)
        return await gather_limited([functools.partial(threaded, item) for item in items], limit=limit)

    return run(_main)()
