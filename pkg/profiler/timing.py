"""
Per-component wall-clock accounting over windows of update steps.

A step is split into feature_extraction, transformer_encoding and
loss_calculation scopes; everything else inside the step that is not the
backward pass lands in "others". Backward time is kept separately and stays
out of the four-way breakdown. Data loading happens outside step scopes and
is not counted anywhere.
"""

import copy
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple, TypeVar

from core.errors import EmptyWindowError, ProfilerScopeError

FEATURE_EXTRACTION = "feature_extraction"
TRANSFORMER_ENCODING = "transformer_encoding"
LOSS_CALCULATION = "loss_calculation"
OTHERS = "others"
COMPONENTS = (FEATURE_EXTRACTION, TRANSFORMER_ENCODING, LOSS_CALCULATION, OTHERS)
SCOPED_COMPONENTS = COMPONENTS[:3]

DEFAULT_WINDOW_STEPS = 200

T = TypeVar("T")


class OperationCounter:
    """Named operation tallies (e.g. attention FLOPs) bumped by the model"""

    def __init__(self):
        self._counts: Dict[str, int] = {}
        self._lock = threading.Lock()

    def add(self, name: str, amount: int):
        with self._lock:
            self._counts[name] = self._counts.get(name, 0) + int(amount)

    def get(self, name: str) -> int:
        return self._counts.get(name, 0)

    def snapshot(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._counts)

    def reset(self):
        with self._lock:
            self._counts.clear()


@dataclass
class TimingReport:
    window_steps: int
    seconds: Dict[str, float]
    backward_seconds: float = 0.0
    audio_seconds: float = 0.0
    operations: Dict[str, int] = field(default_factory=dict)
    baseline: Optional["TimingReport"] = None

    def __post_init__(self):
        missing = set(COMPONENTS) - set(self.seconds)
        extra = set(self.seconds) - set(COMPONENTS)
        if missing or extra:
            raise ValueError(f"timing components must be exactly {COMPONENTS}")
        if any(v < 0 for v in self.seconds.values()):
            raise ValueError("component durations must be >= 0")

    @classmethod
    def from_seconds(cls, seconds: Dict[str, float], window_steps: int = DEFAULT_WINDOW_STEPS,
                     **kwargs) -> "TimingReport":
        return cls(window_steps, dict(seconds), **kwargs)

    @property
    def forward_seconds(self) -> float:
        return sum(self.seconds.values())

    @property
    def step_seconds(self) -> float:
        """Time inside step scopes, backward included"""
        return self.forward_seconds + self.backward_seconds

    @property
    def proportions(self) -> Dict[str, float]:
        total = self.forward_seconds
        if total <= 0:
            return {c: 1.0 / len(COMPONENTS) for c in COMPONENTS}
        return {c: self.seconds[c] / total for c in COMPONENTS}

    @property
    def steps_per_second(self) -> float:
        return self.window_steps / self.step_seconds if self.step_seconds > 0 else float("inf")

    @property
    def audio_seconds_per_second(self) -> float:
        return self.audio_seconds / self.step_seconds if self.step_seconds > 0 else 0.0

    def with_baseline(self, baseline: "TimingReport") -> "TimingReport":
        report = copy.copy(self)
        report.baseline = baseline
        return report

    def reductions(self) -> Dict[str, Optional[float]]:
        """(base - new) / base per component; None without a usable baseline value"""
        if self.baseline is None:
            return {c: None for c in COMPONENTS}
        out = {}
        for c in COMPONENTS:
            base = self.baseline.seconds[c]
            out[c] = (base - self.seconds[c]) / base if base > 0 else None
        return out

    def speedup(self) -> Optional[float]:
        if self.baseline is None:
            return None
        return speedup_ratio(self.baseline.steps_per_second, self.steps_per_second)

    def to_dict(self) -> Dict:
        data = {
            "window_steps": self.window_steps,
            "seconds": dict(self.seconds),
            "proportions": self.proportions,
            "backward_seconds": self.backward_seconds,
            "steps_per_second": self.steps_per_second,
            "audio_seconds_per_second": self.audio_seconds_per_second,
            "operations": dict(self.operations),
        }
        if self.baseline is not None:
            data["baseline"] = self.baseline.to_dict()
            data["reductions"] = self.reductions()
            data["speedup"] = self.speedup()
        return data


def speedup_ratio(baseline_steps_per_sec: float, new_steps_per_sec: float) -> float:
    if baseline_steps_per_sec <= 0:
        raise ValueError("baseline rate must be > 0")
    if new_steps_per_sec <= 0:
        raise ValueError("new rate must be > 0")
    return new_steps_per_sec / baseline_steps_per_sec


@dataclass
class _Window:
    steps: int = 0
    seconds: Dict[str, float] = field(default_factory=lambda: {c: 0.0 for c in COMPONENTS})
    backward: float = 0.0
    audio: float = 0.0

    def report(self, window_steps: int, operations: Dict[str, int]) -> TimingReport:
        return TimingReport(window_steps, dict(self.seconds), self.backward, self.audio, dict(operations))


class StageProfiler:
    """One per training loop. Durations come from a monotonic ns clock."""

    def __init__(self, window_steps: int = DEFAULT_WINDOW_STEPS, enabled: bool = True,
                 counter: Optional[OperationCounter] = None,
                 clock: Callable[[], int] = time.perf_counter_ns):
        if window_steps < 1:
            raise ValueError("window_steps must be >= 1")
        self.window_steps = window_steps
        self.enabled = enabled
        self.counter = counter or OperationCounter()
        self._clock = clock
        self._window = _Window()
        self._completed: List[TimingReport] = []
        self._active: Optional[str] = None
        self._step_scoped = 0
        self._step_backward = 0
        self._step_components: Dict[str, int] = {}
        self.last_step: Dict[str, float] = {}
        self._lock = threading.Lock()

    @contextmanager
    def scope(self, component: str):
        if component not in SCOPED_COMPONENTS:
            raise ProfilerScopeError(f"unknown profiler component {component!r}; "
                                     f"expected one of {SCOPED_COMPONENTS}")
        if self._active is not None and self._active != component:
            raise ProfilerScopeError(f"{component} scope opened inside {self._active} scope")
        if not self.enabled or self._active == component:
            yield
            return

        self._active = component
        start = self._clock()
        try:
            yield
        finally:
            elapsed = self._clock() - start
            self._active = None
            self._window.seconds[component] += elapsed / 1e9
            self._step_scoped += elapsed
            self._step_components[component] = self._step_components.get(component, 0) + elapsed

    @contextmanager
    def backward(self):
        if self._active is not None:
            raise ProfilerScopeError(f"backward scope opened inside {self._active} scope")
        if not self.enabled:
            yield
            return
        start = self._clock()
        try:
            yield
        finally:
            elapsed = self._clock() - start
            self._window.backward += elapsed / 1e9
            self._step_backward += elapsed

    @contextmanager
    def step(self, audio_seconds: float = 0.0):
        """Wrap one whole update step; closes the window every window_steps steps"""
        if not self.enabled:
            yield
            return
        self._step_scoped = self._step_backward = 0
        self._step_components = {}
        start = self._clock()
        try:
            yield
        finally:
            total = self._clock() - start
            others = max(total - self._step_scoped - self._step_backward, 0)
            self._window.seconds[OTHERS] += others / 1e9
            self.last_step = {c: self._step_components.get(c, 0) / 1e9 for c in SCOPED_COMPONENTS}
            self.last_step[OTHERS] = others / 1e9
            self.last_step["backward"] = self._step_backward / 1e9
            self._window.audio += audio_seconds
            self._window.steps += 1
            if self._window.steps == self.window_steps:
                self._close_window()

    def _close_window(self):
        report = self._window.report(self._window.steps, self.counter.snapshot())
        with self._lock:
            self._completed.append(report)
        self._window = _Window()

    def scoped_timing(self, component: str, closure: Callable[[], T]) -> Tuple[T, float]:
        """Run closure inside a component scope; returns (result, seconds)"""
        start = self._clock()
        with self.scope(component):
            result = closure()
        return result, (self._clock() - start) / 1e9

    @property
    def completed_windows(self) -> List[TimingReport]:
        with self._lock:
            return list(self._completed)

    def report(self, window: int = -1, include_partial: bool = False) -> TimingReport:
        """Report for a completed window (the latest by default)"""
        completed = self.completed_windows
        if completed:
            return completed[window]
        if include_partial and self._window.steps:
            return self._window.report(self._window.steps, self.counter.snapshot())
        raise EmptyWindowError()

    def total_report(self) -> TimingReport:
        """All completed windows plus the partial one, summed"""
        parts = self.completed_windows
        if self._window.steps:
            parts.append(self._window.report(self._window.steps, self.counter.snapshot()))
        if not parts:
            raise EmptyWindowError()
        seconds = {c: sum(p.seconds[c] for p in parts) for c in COMPONENTS}
        return TimingReport(sum(p.window_steps for p in parts), seconds,
                            sum(p.backward_seconds for p in parts), sum(p.audio_seconds for p in parts),
                            self.counter.snapshot())
