import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualnilm.manifest import build_household, load_manifest
from dualnilm.pipeline import (ChannelParseError, DataError, GridMismatchError, NonMonotoneError, SpanError,
                               SplitMode, WindowPlan, extract_windows, label_states, load_channel,
                               read_household, read_windows, resample_align, segment_windows, split_dataset,
                               synthesize_household, synthesize_reactive, window_arrays, write_household,
                               write_windows)
from dualnilm.storage import FormatError
from dualnilm.toy import write_toy_dataset
from dualnilm.types import ApplianceSpec, InjectionProfile, validate_household

from conftest import T0, household, series, square

DAY_6S = 14400


def _csv(path, rows, header="timestamp_utc,watts"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


class TestLoadChannel:
    def test_two_rows(self, tmp_path):
        p = _csv(tmp_path / "a.csv", ["2024-01-01T00:00:00Z,100", "2024-01-01T00:00:06Z,110"])
        s = load_channel(p)
        assert len(s) == 2 and s.period == 6.0
        np.testing.assert_array_equal(s.active, [100, 110])
        assert s.reactive is None and s.channel_id == "a"

    def test_vars_column(self, tmp_path):
        p = _csv(tmp_path / "a.csv", ["0,1,2", "6,3,4"], header="timestamp_utc,watts,vars")
        np.testing.assert_array_equal(load_channel(p).reactive, [2, 4])

    def test_decreasing_timestamps(self, tmp_path):
        p = _csv(tmp_path / "a.csv", ["2024-01-01T00:00:06Z,1", "2024-01-01T00:00:00Z,2"])
        with pytest.raises(NonMonotoneError, match=r"a\.csv:3"):
            load_channel(p)

    def test_timezone_offset(self, tmp_path):
        p = _csv(tmp_path / "a.csv", ["2024-01-01T01:00:00,1", "2024-01-01T01:00:06,2"])
        utc = load_channel(p, tz="UTC").start_time
        assert load_channel(p, tz="+01:00").start_time == utc - 3600
        assert load_channel(p, tz=1).start_time == utc - 3600

    def test_parse_error_has_line_number(self, tmp_path):
        p = _csv(tmp_path / "a.csv", ["0,1", "6,abc"])
        with pytest.raises(ChannelParseError, match=r"a\.csv:3"):
            load_channel(p)

    def test_bad_header(self, tmp_path):
        p = _csv(tmp_path / "a.csv", ["0,1"], header="time,power")
        with pytest.raises(ChannelParseError, match=r":1"):
            load_channel(p)

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(DataError, match="nope.csv"):
            load_channel(tmp_path / "nope.csv")

    def test_irregular_samples_held(self, tmp_path):
        p = _csv(tmp_path / "a.csv", ["0,1", "6,2", "18,3", "24,4"])
        s = load_channel(p)
        assert s.period == 6.0
        np.testing.assert_array_equal(s.active, [1, 2, 2, 3, 4])


class TestResample:
    def test_half_hour_onto_six_seconds(self):
        src = series([10.0, 20.0], period=1800.0)
        out = resample_align(src, (T0, 6.0, 300))
        assert len(out) == 300
        np.testing.assert_array_equal(out.active, np.full(300, 10.0))
        out2 = resample_align(src, (T0 + 1800, 6.0, 300))
        np.testing.assert_array_equal(out2.active, np.full(300, 20.0))

    def test_identity(self, rng):
        src = series(rng.normal(size=50), reactive=rng.normal(size=50))
        out = resample_align(src, src.grid)
        np.testing.assert_array_equal(out.active, src.active)
        np.testing.assert_array_equal(out.reactive, src.reactive)

    def test_back_fill(self):
        src = series([7.0, 8.0], start=T0 + 60)
        out = resample_align(src, (T0, 6.0, 12))
        np.testing.assert_array_equal(out.active[:10], np.full(10, 7.0))
        assert out.active[-1] == 8.0 and np.isfinite(out.active).all()


class TestLabelsAndReactive:
    def test_kettle_threshold(self):
        spec = ApplianceSpec("kettle", 1500.0, 0.99)
        np.testing.assert_array_equal(label_states(series([1600.0, 1500.0, 0.0]), spec).states, [1, 0, 0])

    def test_zero_threshold_idle_is_off(self):
        assert not label_states(series(np.zeros(5)), ApplianceSpec("x", 0.0)).states.any()

    @settings(max_examples=50, deadline=None)
    @given(v=st.floats(0, 5000), thr=st.floats(0, 5000), n=st.integers(1, 20))
    def test_constant_series_constant_labels(self, v, thr, n):
        s = label_states(series(np.full(n, v)), ApplianceSpec("x", thr)).states
        assert np.unique(s).size == 1

    def test_fridge_reactive(self):
        out = synthesize_reactive(series(np.full(4, 100.0)), 0.85)
        expect = 100.0 * math.sqrt(1 - 0.85 ** 2) / 0.85
        np.testing.assert_allclose(out.reactive, expect, rtol=1e-12)
        assert expect == pytest.approx(61.974, abs=1e-3)

    def test_unity_and_zero(self):
        assert not synthesize_reactive(series([5.0, 6.0]), 1.0).reactive.any()
        assert not synthesize_reactive(series([0.0, 0.0]), 0.7).reactive.any()
        with pytest.raises(ValueError):
            synthesize_reactive(series([1.0]), 0.0)


class TestSynthesizeHousehold:
    def test_capped_single_step(self):
        h = household([[100.0]], [150.0], rated=200.0)
        assert h.aggregate.active[0] == 0.0 and h.injection.series.active[0] == 100.0

    def test_zero_injection_is_plain_sum(self):
        h = household([[30.0, 10.0], [70.0, 5.0]], [0.0, 0.0])
        np.testing.assert_array_equal(h.aggregate.active, [100.0, 15.0])

    def test_two_appliances(self):
        h = household([[30.0], [70.0]], [40.0], rated=100.0)
        assert h.aggregate.active[0] == 60.0 and h.injection.series.active[0] == 40.0

    def test_grid_mismatch(self):
        inj = InjectionProfile(series([0.0, 0.0]), 10.0)
        with pytest.raises(GridMismatchError):
            synthesize_household([series([1.0, 2.0]), series([1.0, 2.0], start=T0 + 6)],
                                 [ApplianceSpec("a", 0), ApplianceSpec("b", 0)], inj)

    def test_reactive_aggregation_clamped(self):
        specs = [ApplianceSpec("a", 0.0, 1.0)]
        h = household([[100.0, 100.0]], [50.0, 0.0], specs=specs, rated=100.0)
        assert h.aggregate.reactive[0] == 0.0  # 0 - Q_pv clamps at zero
        assert h.injection.series.reactive[0] > 0

    def test_injection_label_track(self):
        h = household([[100.0, 100.0]], [50.0, 0.0], rated=100.0,
                      injection_spec=ApplianceSpec("pv", 0.0, 0.98, is_injection=True))
        assert h.appliance_names[-1] == "pv"
        np.testing.assert_array_equal(h.appliances[-1].states.states, [1, 0])
        assert validate_household(h) == []

    @settings(max_examples=100, deadline=None)
    @given(data=st.data(), n=st.integers(1, 40), k=st.integers(1, 3))
    def test_conservation(self, data, n, k):
        watts = st.lists(st.floats(0, 3000, allow_subnormal=False), min_size=n, max_size=n)
        apps = [data.draw(watts) for _ in range(k)]
        pv = data.draw(watts)
        h = household(apps, pv, rated=3000.0)
        pre = np.sum([t.series.active for t in h.appliances], axis=0)
        np.testing.assert_array_equal(pre, h.aggregate.active + h.injection.series.active)
        assert validate_household(h) == []


class TestWindows:
    def _h(self, n, k=2):
        apps = [square(n, 100 * (i + 1), 17 + i, 0.5) for i in range(k)]
        return household(apps, np.linspace(0, 50, n), rated=60.0)

    def test_counts(self):
        assert len(extract_windows(self._h(600), WindowPlan(300, 300))) == 2
        assert len(extract_windows(self._h(300), WindowPlan(300, 1))) == 1
        with pytest.raises(DataError):
            extract_windows(self._h(299), WindowPlan(300, 1))

    @settings(max_examples=40, deadline=None)
    @given(L=st.integers(20, 120), T=st.integers(1, 20), stride=st.integers(1, 25))
    def test_count_formula(self, L, T, stride):
        ws = window_arrays(self._h(L), WindowPlan(T, stride))
        assert len(ws) == (L - T) // stride + 1 == WindowPlan(T, stride).count(L)

    def test_contents(self):
        h = self._h(50)
        ws = extract_windows(h, WindowPlan(10, 7))
        for w in ws:
            a = w.start_index
            np.testing.assert_array_equal(w.inputs[:, 0], h.aggregate.active[a:a + 10])
            np.testing.assert_array_equal(w.inputs[:, 1], h.aggregate.reactive[a:a + 10])
            np.testing.assert_array_equal(w.state_labels, [t.states.states[a + 9] for t in h.appliances])
            np.testing.assert_allclose(w.injection_target, h.injection.series.active[a:a + 10] / 60.0)
            assert w.start_time == T0 + a * 6.0

    def test_label_depends_only_on_last_step(self):
        h = self._h(40)
        base = window_arrays(h, WindowPlan(10, 10))
        apps = [t.series.active.copy() for t in h.appliances]
        for a in apps:
            a[np.arange(40) % 10 != 9] = 0.0  # wipe every non-final step
        wiped = window_arrays(household(apps, h.injection.series.active, rated=60.0), WindowPlan(10, 10))
        np.testing.assert_array_equal(base.states, wiped.states)


class TestSplits:
    def _days(self, days, period=600.0):
        n = int(days * 86400 / period)
        return household([square(n, 100, 7, 0.5)], np.zeros(n), rated=1.0, period=period)

    def test_chronological(self):
        h = self._days(10)
        (f,) = split_dataset(h, SplitMode("chronological", 3))
        per = 144
        assert f.train_ranges == ((0, 7 * per),) and f.test_ranges == ((7 * per, 10 * per),)

    def test_test_initial(self):
        (f,) = split_dataset(self._days(3), SplitMode("test_initial", 1))
        assert f.test_ranges == ((0, 144),) and f.train_ranges == ((144, 432),)

    def test_test_middle(self):
        (f,) = split_dataset(self._days(3), SplitMode("test_middle", 1))
        assert f.test_ranges == ((144, 288),)
        assert f.train_ranges == ((0, 144), (288, 432))
        assert [len(s) for s in f.train] == [144, 144]

    def test_leave_one_day_out(self):
        folds = split_dataset(self._days(10), SplitMode("leave_one_day_out"))
        assert len(folds) == 10
        for i, f in enumerate(folds):
            a, b = f.test_ranges[0]
            assert b - a == 144 and a == 144 * i
            covered = sorted(f.train_ranges + f.test_ranges)
            assert covered[0][0] == 0 and covered[-1][1] == 1440
            assert all(x[1] == y[0] for x, y in zip(covered, covered[1:]))

    def test_span_error(self):
        with pytest.raises(SpanError):
            split_dataset(self._days(2), SplitMode("chronological", 2))

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            SplitMode("random")

    def test_windows_never_straddle(self):
        h = self._days(3)
        for f in split_dataset(h, SplitMode("leave_one_day_out")):
            ws_train = segment_windows(f.train, WindowPlan(20, 3))
            ws_test = segment_windows(f.test, WindowPlan(20, 3))
            test_start, test_end = (T0 + r * 600.0 for r in f.test_ranges[0])
            tr = ws_train.time_ranges()
            assert not np.any((tr[:, 0] < test_end) & (tr[:, 1] > test_start))
            te = ws_test.time_ranges()
            assert te[:, 0].min() >= test_start and te[:, 1].max() <= test_end


class TestPersistence:
    def test_household_round_trip(self, tmp_path, rng):
        n = 200
        h = household([rng.uniform(0, 500, n), square(n, 90, 11, 0.3)], rng.uniform(0, 400, n), rated=400.0,
                      residual=rng.uniform(0, 30, n),
                      injection_spec=ApplianceSpec("pv", 0.0, 0.98, is_injection=True), name="rt")
        write_household(tmp_path / "h.dnilm", h)
        back = read_household(tmp_path / "h.dnilm")
        assert back.name == "rt" and back.appliance_names == h.appliance_names
        assert back.aggregate.grid == h.aggregate.grid
        assert back.aggregate.active.tobytes() == h.aggregate.active.tobytes()
        assert back.aggregate.reactive.tobytes() == h.aggregate.reactive.tobytes()
        for a, b in zip(h.appliances, back.appliances):
            assert a.spec == b.spec
            assert a.series.active.tobytes() == b.series.active.tobytes()
            assert a.states.states.tobytes() == b.states.states.tobytes()
        assert back.injection.series.active.tobytes() == h.injection.series.active.tobytes()
        assert back.injection.rated_capacity == 400.0

    def test_file_starts_with_magic(self, tmp_path):
        write_household(tmp_path / "h.dnilm", household([[1.0, 2.0]], [0.0, 0.0]))
        assert (tmp_path / "h.dnilm").read_bytes().startswith(b"DNILM1\n")

    def test_windows_round_trip(self, tmp_path):
        h = household([square(100, 50, 9, 0.5)], np.linspace(0, 10, 100), rated=10.0)
        ws = window_arrays(h, WindowPlan(30, 7))
        write_windows(tmp_path / "w.dnilm", ws)
        back = read_windows(tmp_path / "w.dnilm")
        for name in ("inputs", "states", "injection", "start_time"):
            assert getattr(back, name).tobytes() == getattr(ws, name).tobytes()
        assert back.appliance_names == ws.appliance_names

    def test_wrong_magic(self, tmp_path):
        (tmp_path / "x.dnilm").write_bytes(b"NOTIT\n....")
        with pytest.raises(FormatError):
            read_household(tmp_path / "x.dnilm")


class TestManifest:
    def test_toy_manifest_builds(self, tmp_path):
        m = load_manifest(write_toy_dataset(tmp_path, days=0.5))
        h = build_household(m)
        assert len(h) == 7200 and h.appliance_names == ["lamp", "heater"]
        assert validate_household(h) == []
        assert h.injection.series.active.max() > 0

    def test_missing_channel_names_path(self, tmp_path):
        m_path = write_toy_dataset(tmp_path, days=0.1)
        (tmp_path / "heater.csv").unlink()
        with pytest.raises(DataError, match="heater.csv"):
            build_household(load_manifest(m_path))

    def test_malformed(self, tmp_path):
        (tmp_path / "m.yaml").write_text("name: x\nappliances: [{name: a}]\n")
        with pytest.raises(DataError):
            load_manifest(tmp_path / "m.yaml")
