import asyncio
from dataclasses import dataclass
from types import TracebackType
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence, Tuple, Type, TypeVar

from loguru import logger

from beta_ensembles.core import config
from beta_ensembles.core.errors import BetaEnsembleError, ConfigurationError

T = TypeVar("T")


class TaskManager:
    """
    Context manager running one unit of work as an asyncio task.
    The result is captured on exit; unfinished tasks are cancelled.
    """

    def __init__(
        self,
        coro: Callable[[], Awaitable[T]],
        name: Optional[str] = None,
        timeout: float = 0.5,
    ):
        """
        Initialize with a coroutine factory and optional name.

        Args:
            coro: Factory function that returns a coroutine to run
            name: Optional name for logging purposes
            timeout: Seconds to wait for a cancelled task to clean up
        """
        self.coro_factory = coro
        self.name = name or "Task"
        self.task: Optional[asyncio.Task] = None
        self.timeout = timeout
        self.result: Optional[T] = None

    @classmethod
    def in_thread(cls, func: Callable[[], T], name: Optional[str] = None) -> "TaskManager":
        """Wrap a blocking callable so that it runs in the default executor"""
        return cls(lambda: asyncio.to_thread(func), name=name)

    async def __aenter__(self) -> "TaskManager":
        """Start the task when entering the context"""
        self.task = asyncio.create_task(self.coro_factory())
        return self

    async def wait(self) -> T:
        """Wait for the task and return its result, re-raising its failure"""
        if self.task is None:
            raise RuntimeError(f"{self.name} was never started")
        self.result = await self.task
        return self.result

    async def __aexit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        """Cancel and clean up the task when exiting the context"""
        if not self.task:
            return

        if self.task.done() and not self.task.cancelled():
            try:
                self.result = self.task.result()
            except Exception:
                # Failures surface through wait()
                pass

        if not self.task.done():
            logger.debug(f"Cancelling {self.name}")
            self.task.cancel()
            try:
                await asyncio.shield(asyncio.wait([self.task], timeout=self.timeout))
            except Exception:
                pass

    @property
    def done(self) -> bool:
        """Check if the task is done"""
        return self.task is not None and self.task.done()


@dataclass(frozen=True)
class Failure:
    """
    Represents a captured failure of a pipeline step.

    Attributes:
        error: The exception that was raised
        exit_code: Process exit status the CLI maps the failure to
        details: Structured diagnostic payload for the manifest
    """

    error: Exception
    exit_code: int
    details: Dict[str, Any]

    @property
    def message(self) -> str:
        return f"{type(self.error).__name__}: {self.error}"

    @classmethod
    def of(cls, error: Exception) -> "Failure":
        """Library errors keep their exit code; an OSError counts as a configuration error"""
        if isinstance(error, BetaEnsembleError):
            return cls(error, error.exit_code, dict(error.details))
        if isinstance(error, OSError):
            return cls(error, ConfigurationError.exit_code, {"path": error.filename})
        return cls(error, BetaEnsembleError.exit_code, {})


async def run_with_errorhandling(coro: Awaitable[T], context: str) -> Tuple[Optional[T], Optional[Failure]]:
    """
    Await one pipeline step and capture its failure instead of raising.

    Args:
        coro: The step to await
        context: What the step does, for the log

    Returns:
        (result, None) on success, (None, failure) otherwise; cancellation propagates
    """
    try:
        return await coro, None
    except asyncio.CancelledError:
        raise
    except Exception as e:
        failure = Failure.of(e)
        logger.error(f"{context} failed (exit code {failure.exit_code}): {failure.message}")
        if failure.details:
            logger.debug(f"{context} diagnostics: {failure.details}")
        return None, failure


async def gather_in_threads(
    funcs: Sequence[Callable[[], T]],
    jobs: Optional[int] = None,
    name: str = "job",
) -> List[T]:
    """
    Run blocking callables in worker threads with bounded concurrency.

    Results come back in submission order whatever the completion order,
    so downstream reductions are deterministic. The first failure is
    re-raised after the remaining tasks have been cancelled.
    """
    limit = asyncio.Semaphore(max(1, jobs or config.JOBS))

    async def guarded(func: Callable[[], T]) -> T:
        async with limit:
            return await asyncio.to_thread(func)

    managers = [
        TaskManager(lambda f=func: guarded(f), name=f"{name}[{i}]")
        for i, func in enumerate(funcs)
    ]
    results: List[T] = []
    entered: List[TaskManager] = []
    try:
        for manager in managers:
            await manager.__aenter__()
            entered.append(manager)
        for manager in entered:
            results.append(await manager.wait())
    finally:
        for manager in entered:
            await manager.__aexit__(None, None, None)
    logger.debug(f"Finished {len(results)} {name} task(s)")
    return results


def run_parallel(
    funcs: Sequence[Callable[[], T]], jobs: Optional[int] = None, name: str = "job"
) -> List[T]:
    """Synchronous front end of gather_in_threads for library callers"""
    if len(funcs) <= 1 or (jobs or config.JOBS) <= 1:
        return [func() for func in funcs]
    return asyncio.run(gather_in_threads(funcs, jobs=jobs, name=name))
