"""
Recursive timing profiler for the solver stack.
"""

from contextlib import contextmanager
from dataclasses import dataclass, field
import functools
import logging
import time

logger = logging.getLogger(__name__)


@dataclass
class ProfiledFunction:
    name: str
    """
    The name of this function
    """
    t: float
    """
    The time spent in this function
    """
    calls: int = 0
    """
    How many times the section was entered
    """
    children: dict[str, "ProfiledFunction"] = field(default_factory=dict)
    """
    Recursive children of this function
    """

    def as_dict(self) -> dict:
        """
        Nested plain-dict form, for run manifests.
        """
        return {
            "seconds": self.t,
            "calls": self.calls,
            "children": {k: v.as_dict() for k, v in self.children.items()},
        }


# Control
TIMER_ENABLED = False
ROOT_PROFILER = ProfiledFunction("ROOT", 0.0)
CUR_PROFILER = ROOT_PROFILER


def enable():
    """
    Globally enable profiling.
    """
    global TIMER_ENABLED
    TIMER_ENABLED = True


def disable():
    """
    Globally disable profiling.
    """
    global TIMER_ENABLED
    TIMER_ENABLED = False


def is_enabled():
    """
    Whether profiling is enabled.
    """
    return TIMER_ENABLED


def reset():
    """
    Drop everything recorded so far.
    """
    global ROOT_PROFILER, CUR_PROFILER
    ROOT_PROFILER = ProfiledFunction("ROOT", 0.0)
    CUR_PROFILER = ROOT_PROFILER


@contextmanager
def profile_context(name: str):
    """
    Profile a chunk of code as a context manager. Does nothing unless
    profiling is enabled, so the solver hot loops stay cheap.

    Args:
        name: The name of the section of code to profile.
    """
    if not TIMER_ENABLED:
        yield
        return

    global CUR_PROFILER
    prev = CUR_PROFILER

    CUR_PROFILER = CUR_PROFILER.children.setdefault(name, ProfiledFunction(name, 0))
    CUR_PROFILER.calls += 1

    t_start = time.monotonic()
    try:
        yield
    finally:
        CUR_PROFILER.t += time.monotonic() - t_start
        CUR_PROFILER = prev


def timer(name):
    """
    Timing profiler decorator.

    Args:
        name: The name of the function to profile.
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            with profile_context(name):
                res = func(*args, **kwargs)
            return res

        return wrapper

    return decorator


def _report_lines(profiler: ProfiledFunction, depth: int, lines: list[str]):
    """
    Recursively format a profiler
    """
    indent = depth * 2 * " "
    lines.append(f"{indent}[{profiler.t:0.4f}s x{profiler.calls}] {profiler.name}")
    for child in profiler.children.values():
        _report_lines(child, depth + 1, lines)


def report() -> dict:
    """
    The recorded profile as nested dicts.
    """
    return {k: v.as_dict() for k, v in ROOT_PROFILER.children.items()}


def log_report():
    """
    Log the profiler report.
    """
    lines = []
    for profiler in ROOT_PROFILER.children.values():
        _report_lines(profiler, 0, lines)
    logger.info("Solver profile:\n%s", "\n".join(lines))
