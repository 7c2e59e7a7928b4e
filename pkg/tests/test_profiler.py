import csv
import json
import time

import pytest

from core.errors import EmptyWindowError, ProfilerScopeError, ValidationError
from profiler.render import (
    NO_REDUCTION, comparison_table, format_reduction, median_report, proportion_table, render_proportions_svg,
    report_json, speedup_table, write_csv,
)
from profiler.timing import (
    COMPONENTS, FEATURE_EXTRACTION, LOSS_CALCULATION, OTHERS, TRANSFORMER_ENCODING, OperationCounter,
    StageProfiler, TimingReport, speedup_ratio,
)

SECOND = 1_000_000_000

BASELINE = TimingReport.from_seconds({FEATURE_EXTRACTION: 12.5, TRANSFORMER_ENCODING: 34.5,
                                      LOSS_CALCULATION: 28.4, OTHERS: 2.1})
FAST = TimingReport.from_seconds({FEATURE_EXTRACTION: 0.6, TRANSFORMER_ENCODING: 23.0,
                                  LOSS_CALCULATION: 0.4, OTHERS: 2.5})


class FakeClock:
    def __init__(self):
        self.now = 0

    def __call__(self) -> int:
        return self.now

    def advance(self, seconds: float):
        self.now += int(seconds * SECOND)


def _step(profiler, clock, fe=2.0, enc=3.0, loss=1.0, backward=4.0, loose=0.5, audio=1.5):
    with profiler.step(audio_seconds=audio):
        clock.advance(loose)
        with profiler.scope(FEATURE_EXTRACTION):
            clock.advance(fe)
        with profiler.scope(TRANSFORMER_ENCODING):
            clock.advance(enc)
        with profiler.scope(LOSS_CALCULATION):
            clock.advance(loss)
        with profiler.backward():
            clock.advance(backward)


def test_reductions_and_dashes():
    reductions = FAST.with_baseline(BASELINE).reductions()
    formatted = {c: format_reduction(reductions[c]) for c in COMPONENTS}
    assert formatted == {FEATURE_EXTRACTION: "95.2%", TRANSFORMER_ENCODING: "33.3%",
                         LOSS_CALCULATION: "98.6%", OTHERS: NO_REDUCTION}
    assert FAST.reductions()[FEATURE_EXTRACTION] is None
    assert format_reduction(None) == NO_REDUCTION


def test_proportions():
    shares = BASELINE.proportions
    assert sum(shares.values()) == pytest.approx(1.0)
    assert shares[FEATURE_EXTRACTION] == pytest.approx(0.161, abs=1e-3)
    assert shares[TRANSFORMER_ENCODING] == pytest.approx(0.445, abs=1e-3)
    assert shares[LOSS_CALCULATION] == pytest.approx(0.367, abs=1e-3)
    assert shares[OTHERS] == pytest.approx(0.027, abs=1e-3)


def test_identical_reports_reduce_nothing():
    reductions = BASELINE.with_baseline(BASELINE).reductions()
    assert all(format_reduction(v) == "0.0%" for v in reductions.values())
    assert BASELINE.with_baseline(BASELINE).speedup() == pytest.approx(1.0)


def test_speedup():
    assert speedup_ratio(10.0, 52.0) == pytest.approx(5.2)
    assert "5.2x" in speedup_table({"S1": 10.0, "S4": 52.0})
    with pytest.raises(ValueError):
        speedup_ratio(0.0, 1.0)


def test_report_must_have_exactly_the_four_components():
    with pytest.raises(ValueError):
        TimingReport.from_seconds({FEATURE_EXTRACTION: 1.0})
    with pytest.raises(ValueError):
        TimingReport.from_seconds({**BASELINE.seconds, OTHERS: -1.0})


def test_profiler_accounts_scopes_others_and_backward():
    clock = FakeClock()
    profiler = StageProfiler(window_steps=1, clock=clock)
    _step(profiler, clock)
    report = profiler.report()
    assert report.seconds == pytest.approx({FEATURE_EXTRACTION: 2.0, TRANSFORMER_ENCODING: 3.0,
                                            LOSS_CALCULATION: 1.0, OTHERS: 0.5})
    assert report.backward_seconds == pytest.approx(4.0)
    assert report.step_seconds == pytest.approx(10.5)
    assert report.audio_seconds == pytest.approx(1.5)
    assert profiler.last_step["backward"] == pytest.approx(4.0)


def test_time_outside_steps_is_not_counted():
    clock = FakeClock()
    profiler = StageProfiler(window_steps=1, clock=clock)
    clock.advance(100.0)
    _step(profiler, clock)
    clock.advance(100.0)
    assert profiler.report().step_seconds == pytest.approx(10.5)


def test_windows_close_every_n_steps():
    clock = FakeClock()
    profiler = StageProfiler(window_steps=2, clock=clock)
    with pytest.raises(EmptyWindowError):
        profiler.report()
    _step(profiler, clock)
    assert profiler.report(include_partial=True).window_steps == 1
    _step(profiler, clock, fe=4.0)
    _step(profiler, clock)
    assert len(profiler.completed_windows) == 1
    window = profiler.report()
    assert window.window_steps == 2
    assert window.seconds[FEATURE_EXTRACTION] == pytest.approx(6.0)
    assert window.steps_per_second == pytest.approx(2 / 23.0)
    total = profiler.total_report()
    assert total.window_steps == 3
    assert total.seconds[FEATURE_EXTRACTION] == pytest.approx(8.0)


def test_scope_errors():
    profiler = StageProfiler(clock=FakeClock())
    with pytest.raises(ProfilerScopeError):
        with profiler.scope("data_loading"):
            pass
    with pytest.raises(ProfilerScopeError, match="inside"):
        with profiler.scope(FEATURE_EXTRACTION):
            with profiler.scope(LOSS_CALCULATION):
                pass
    with pytest.raises(ProfilerScopeError):
        with profiler.scope(TRANSFORMER_ENCODING):
            with profiler.backward():
                pass
    assert issubclass(ProfilerScopeError, ValidationError)


def test_reentering_the_same_scope_is_counted_once():
    clock = FakeClock()
    profiler = StageProfiler(window_steps=1, clock=clock)
    with profiler.step():
        with profiler.scope(TRANSFORMER_ENCODING):
            with profiler.scope(TRANSFORMER_ENCODING):
                clock.advance(1.0)
    assert profiler.report().seconds[TRANSFORMER_ENCODING] == pytest.approx(1.0)
    assert profiler.report().seconds[OTHERS] == pytest.approx(0.0)


def test_disabled_profiler_records_nothing():
    clock = FakeClock()
    profiler = StageProfiler(window_steps=1, enabled=False, clock=clock)
    _step(profiler, clock)
    assert profiler.completed_windows == []
    with pytest.raises(EmptyWindowError):
        profiler.total_report()


def test_operation_counts_travel_with_the_window():
    clock = FakeClock()
    counter = OperationCounter()
    profiler = StageProfiler(window_steps=1, counter=counter, clock=clock)
    with profiler.step():
        counter.add("attention_flops", 128)
    assert profiler.report().operations == {"attention_flops": 128}


def test_scoped_timing_returns_the_result():
    clock = FakeClock()
    profiler = StageProfiler(clock=clock)

    def work():
        clock.advance(0.25)
        return "done"

    assert profiler.scoped_timing(FEATURE_EXTRACTION, work) == ("done", pytest.approx(0.25))


def test_equal_stage_costs_split_evenly_over_200_steps():
    clock = FakeClock()
    profiler = StageProfiler(window_steps=200, clock=clock)
    for _ in range(200):
        _step(profiler, clock, fe=0.01, enc=0.01, loss=0.01, backward=0.02, loose=0.01)
    report = profiler.report()
    assert report.window_steps == 200
    for component in COMPONENTS:
        assert report.proportions[component] == pytest.approx(0.25)
    assert report.backward_seconds == pytest.approx(4.0)


def test_a_sleep_is_measured_at_its_length():
    profiler = StageProfiler(window_steps=1)
    with profiler.step():
        with profiler.scope(FEATURE_EXTRACTION):
            time.sleep(0.01)
    measured = profiler.report().seconds[FEATURE_EXTRACTION]
    assert 0.0099 <= measured < 0.05


def _busy(seconds: float):
    end = time.perf_counter() + seconds
    while time.perf_counter() < end:
        pass


def _timed_run(enabled: bool, steps: int = 50, stage_seconds: float = 0.0005) -> float:
    profiler = StageProfiler(window_steps=steps, enabled=enabled)
    start = time.perf_counter()
    for _ in range(steps):
        with profiler.step():
            for component in (FEATURE_EXTRACTION, TRANSFORMER_ENCODING, LOSS_CALCULATION):
                with profiler.scope(component):
                    _busy(stage_seconds)
            with profiler.backward():
                _busy(stage_seconds)
    return time.perf_counter() - start


def test_profiling_adds_at_most_five_percent():
    plain = min(_timed_run(False) for _ in range(3))
    profiled = min(_timed_run(True) for _ in range(3))
    assert profiled <= 1.05 * plain


def test_tables():
    table = comparison_table(BASELINE, FAST, names=("hubert", "s8"))
    assert table.splitlines()[0] == "Average time consumption (seconds/200 updates)"
    assert "95.2%" in table and "98.6%" in table and NO_REDUCTION in table
    assert "16.1%" in proportion_table({"hubert": BASELINE})


def test_json_report():
    data = json.loads(report_json(FAST.with_baseline(BASELINE), config="s8"))
    assert data["config"] == "s8"
    assert data["reductions"][OTHERS] < 0
    assert set(data["seconds"]) == set(COMPONENTS)


def test_csv_and_svg(tmp_path):
    reports = {"hubert": BASELINE, "s8": FAST}
    with write_csv(tmp_path / "timing.csv", reports).open() as f:
        rows = list(csv.reader(f))
    assert rows[0][:5] == ["config", *COMPONENTS]
    assert [r[0] for r in rows[1:]] == ["hubert", "s8"]
    svg = render_proportions_svg(tmp_path / "timing.svg", reports).read_text()
    assert "<svg" in svg


def test_median_report():
    reports = [TimingReport.from_seconds({c: v for c in COMPONENTS}) for v in (1.0, 5.0, 2.0)]
    assert median_report(reports).seconds[OTHERS] == 2.0
    with pytest.raises(ValueError):
        median_report([])
