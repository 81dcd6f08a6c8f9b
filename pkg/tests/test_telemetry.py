"""Telemetry parser, stream, and rail-selection tests."""

import sys
import textwrap

import pytest
from hypothesis import given, settings, strategies as st

from e3p.errors import (
    ConfigError,
    LineParseError,
    RailSelectionError,
    TelemetryError,
)
from e3p.telemetry import (
    GPU_RAIL,
    DEFAULT_TX2_SELECTION,
    PowerSample,
    RailSelection,
    RowSignal,
    TelemetrySource,
    open_stream,
    parse_nvidia_smi_row,
    parse_tegrastats_line,
    select_power,
    sniff_dialect,
    write_normalized_csv,
)

from oracles import nvidia_smi_mean_mw, tegrastats_rail_means

TX2_LINE = ("RAM 1345/7860MB (lfb 1175x4MB) SWAP 0/3930MB (cached 0MB) "
            "CPU [0%@345,off,off,0%@345,0%@345,0%@345] EMC_FREQ 0% "
            "GR3D_FREQ 0% PLL@37.5C GPU@34C "
            "VDD_SYS_GPU 152/152 VDD_SYS_SOC 381/381 VDD_4V0_WIFI 0/0 "
            "VDD_IN 2532/2532 VDD_SYS_CPU 304/304 VDD_SYS_DDR 327/327")


# --- tegrastats parsing ------------------------------------------------------

def test_parse_tegrastats_extracts_rails_and_ignores_other_fields():
    sample = parse_tegrastats_line(TX2_LINE, t_ms=0.0)
    assert sample.rails == {
        "VDD_SYS_GPU": 152.0, "VDD_SYS_SOC": 381.0, "VDD_4V0_WIFI": 0.0,
        "VDD_IN": 2532.0, "VDD_SYS_CPU": 304.0, "VDD_SYS_DDR": 327.0,
    }


def test_parse_tegrastats_keeps_current_not_average():
    sample = parse_tegrastats_line("VDD_IN 3650/3612", t_ms=5.0)
    assert sample.rails == {"VDD_IN": 3650.0}
    assert sample.t_ms == 5.0


def test_parse_tegrastats_no_rails_is_typed_error():
    with pytest.raises(LineParseError):
        parse_tegrastats_line("RAM 1345/7860MB CPU [0%@345]", t_ms=0.0)


def test_parse_tegrastats_malformed_number_is_typed_error():
    with pytest.raises(LineParseError):
        parse_tegrastats_line("VDD_SYS_GPU 15x/152", t_ms=0.0)
    with pytest.raises(LineParseError):
        parse_tegrastats_line("VDD_SYS_GPU 152", t_ms=0.0)
    with pytest.raises(LineParseError):
        parse_tegrastats_line("VDD_SYS_GPU 152/ VDD_IN 3/3", t_ms=0.0)


def test_parse_tegrastats_rail_without_value_is_typed_error():
    with pytest.raises(LineParseError):
        parse_tegrastats_line("VDD_SYS_GPU 152/152 VDD_IN", t_ms=0.0)


def test_tx2_corpus_every_line_parses_and_means_match_oracle(tx2_log):
    lines = tx2_log.read_text().splitlines()
    assert len(lines) >= 100
    sums: dict[str, float] = {}
    for i, line in enumerate(lines):
        sample = parse_tegrastats_line(line, t_ms=float(i))
        for rail, mw in sample.rails.items():
            sums[rail] = sums.get(rail, 0.0) + mw
    means = {rail: total / len(lines) for rail, total in sums.items()}
    expected = tegrastats_rail_means(lines)
    assert set(means) == set(expected)
    for rail in means:
        assert means[rail] == pytest.approx(expected[rail], abs=0.01)


# --- nvidia-smi parsing -------------------------------------------------------

def test_parse_nvidia_smi_converts_watts_to_milliwatts():
    sample = parse_nvidia_smi_row("13.45 W", t_ms=0.0)
    assert sample.rails == {GPU_RAIL: pytest.approx(13450.0)}


def test_parse_nvidia_smi_header_is_skip_signal():
    assert parse_nvidia_smi_row("power.draw [W]", t_ms=0.0) is RowSignal.HEADER


def test_parse_nvidia_smi_na_is_missing_signal():
    assert parse_nvidia_smi_row("N/A", t_ms=0.0) is RowSignal.MISSING
    assert parse_nvidia_smi_row("[N/A]", t_ms=0.0) is RowSignal.MISSING


@pytest.mark.parametrize("row", ["13.45 V", "watts 13", "1e3 W", "nan W", ""])
def test_parse_nvidia_smi_malformed_rows_are_typed_errors(row):
    with pytest.raises(LineParseError):
        parse_nvidia_smi_row(row, t_ms=0.0)


def test_rtx_corpus_parses_and_mean_matches_oracle(rtx_log):
    lines = rtx_log.read_text().splitlines()
    assert len(lines) >= 100
    values = []
    for line in lines:
        parsed = parse_nvidia_smi_row(line, t_ms=0.0)
        if isinstance(parsed, PowerSample):
            values.append(parsed.rails[GPU_RAIL])
    mean = sum(values) / len(values)
    assert mean == pytest.approx(nvidia_smi_mean_mw(lines), abs=0.01)
    # fixture is constructed around the published RTX power scale
    assert mean == pytest.approx(19745.0, abs=0.5)


# --- parser totality (fuzz) ---------------------------------------------------

@given(st.text(max_size=120))
@settings(max_examples=300, deadline=None)
def test_parsers_never_crash_on_arbitrary_text(line):
    for parser in (parse_tegrastats_line, parse_nvidia_smi_row):
        try:
            result = parser(line, t_ms=0.0)
        except LineParseError:
            continue
        assert isinstance(result, (PowerSample, RowSignal))


# --- PowerSample invariants -----------------------------------------------------

def test_power_sample_rejects_empty_negative_and_nonfinite():
    with pytest.raises(TelemetryError):
        PowerSample(0.0, {})
    with pytest.raises(TelemetryError):
        PowerSample(0.0, {"GPU": -1.0})
    with pytest.raises(TelemetryError):
        PowerSample(0.0, {"GPU": float("inf")})


# --- rail selection --------------------------------------------------------------

def test_select_power_sum_and_single():
    sample = PowerSample(0.0, {"GPU": 152.0, "SOC": 381.0})
    assert select_power(sample, RailSelection.sum_of(["GPU", "SOC"])) == 533.0
    assert select_power(PowerSample(0.0, {"GPU": 13450.0}),
                        RailSelection.single("GPU")) == 13450.0


def test_select_power_missing_rail_names_it():
    sample = PowerSample(0.0, {"GPU": 1.0})
    with pytest.raises(RailSelectionError, match="SOC"):
        select_power(sample, RailSelection.sum_of(["GPU", "SOC"]))


def test_empty_sum_selection_is_a_configuration_error():
    with pytest.raises(RailSelectionError):
        RailSelection.sum_of([])


def test_rail_selection_parse_and_label_round_trip():
    for spec, expected in [
        ("single:GPU", RailSelection.single("GPU")),
        ("GPU", RailSelection.single("GPU")),
        ("sum:A+B", RailSelection.sum_of(["A", "B"])),
        ("A+B", RailSelection.sum_of(["A", "B"])),
        ("total_board:VDD_IN", RailSelection.total_board("VDD_IN")),
    ]:
        sel = RailSelection.parse(spec)
        assert sel == expected
        assert RailSelection.parse(sel.label()) == sel


@given(st.dictionaries(st.sampled_from(["A", "B", "C", "D"]),
                       st.floats(min_value=0, max_value=1e6), min_size=1))
def test_sum_selection_equals_sum_of_singles(rails):
    sample = PowerSample(0.0, dict(rails))
    names = sorted(rails)
    total = select_power(sample, RailSelection.sum_of(names))
    assert total == sum(
        select_power(sample, RailSelection.single(n)) for n in names)


# --- recorded streams --------------------------------------------------------------

def recorded(path, interval=1000, dialect="auto"):
    return TelemetrySource(kind="recorded_log", sample_interval_ms=interval,
                           path=path, dialect=dialect)


def test_recorded_tegrastats_synthesizes_timeline(tmp_path):
    log = tmp_path / "ten.log"
    log.write_text("\n".join(["VDD_SYS_GPU 100/100"] * 10) + "\n")
    samples = list(open_stream(recorded(log)))
    assert len(samples) == 10
    assert [s.t_ms for s in samples] == [float(k * 1000) for k in range(10)]


def test_recorded_empty_file_yields_zero_samples(tmp_path):
    log = tmp_path / "empty.log"
    log.write_text("")
    assert list(open_stream(recorded(log))) == []


def test_recorded_missing_file_is_an_error(tmp_path):
    with pytest.raises(TelemetryError):
        open_stream(recorded(tmp_path / "nope.log"))


def test_recorded_nvidia_header_does_not_consume_a_tick(tmp_path):
    log = tmp_path / "gpu.log"
    log.write_text("power.draw [W]\n10.00 W\nN/A\n12.00 W\n")
    samples = list(open_stream(recorded(log, interval=500)))
    # header: no tick; N/A: tick but no sample
    assert [(s.t_ms, s.rails[GPU_RAIL]) for s in samples] == [
        (0.0, 10000.0), (1000.0, 12000.0)]


def test_recorded_normalized_csv_replays_embedded_timestamps(tmp_path):
    log = tmp_path / "norm.csv"
    log.write_text(textwrap.dedent("""\
        t_ms,rail,mw
        0.0,GPU,100.0
        0.0,SOC,50.0
        500.0,GPU,110.0
        500.0,SOC,51.0
        """))
    samples = list(open_stream(recorded(log)))
    assert samples == [
        PowerSample(0.0, {"GPU": 100.0, "SOC": 50.0}),
        PowerSample(500.0, {"GPU": 110.0, "SOC": 51.0}),
    ]


def test_recorded_normalized_csv_rejects_backwards_time(tmp_path):
    log = tmp_path / "bad.csv"
    log.write_text("t_ms,rail,mw\n100.0,GPU,1.0\n50.0,GPU,1.0\n")
    with pytest.raises(TelemetryError):
        list(open_stream(recorded(log)))


def test_recorded_dialect_sniffing(tmp_path, tx2_log, rtx_log, constant_csv):
    assert sniff_dialect("t_ms,rail,mw") == "normalized_csv"
    assert sniff_dialect(TX2_LINE) == "tegrastats"
    assert sniff_dialect("13.45 W") == "nvidia_smi"
    assert sniff_dialect("power.draw [W]") == "nvidia_smi"
    with pytest.raises(TelemetryError):
        sniff_dialect("completely unrelated text")
    # end to end: each shipped log sniffs and streams
    assert len(list(open_stream(recorded(tx2_log)))) == 120
    assert len(list(open_stream(recorded(rtx_log)))) == 118
    assert len(list(open_stream(recorded(constant_csv)))) == 21


def test_recorded_parse_error_raises_by_default_or_skips(tmp_path):
    log = tmp_path / "dirty.log"
    log.write_text("VDD_SYS_GPU 100/100\ngarbage VDD_SYS_GPU xx/yy\n"
                   "VDD_SYS_GPU 120/110\n")
    with pytest.raises(LineParseError):
        list(open_stream(recorded(log, dialect="tegrastats")))
    stream = open_stream(recorded(log, dialect="tegrastats"), on_error="skip")
    samples = list(stream)
    assert [s.rails["VDD_SYS_GPU"] for s in samples] == [100.0, 120.0]
    assert stream.skipped_lines == 1
    # the skipped line still consumed its interval tick
    assert [s.t_ms for s in samples] == [0.0, 2000.0]


def test_stream_timestamps_are_nondecreasing(tx2_log):
    last = -1.0
    for sample in open_stream(recorded(tx2_log)):
        assert sample.t_ms >= last
        last = sample.t_ms


def test_normalized_csv_round_trip(tmp_path, constant_csv):
    samples = list(open_stream(recorded(constant_csv)))
    out = tmp_path / "again.csv"
    with out.open("w") as fh:
        write_normalized_csv(samples, fh)
    again = list(open_stream(recorded(out)))
    assert again == samples


# --- live streams (fake tool via command override) -----------------------------------

FAKE_NVSMI = textwrap.dedent("""\
    import sys, time
    print("power.draw [W]", flush=True)
    for v in ("13.45 W", "N/A", "14.00 W"):
        print(v, flush=True)
        time.sleep(0.02)
    sys.stdout.write("15.2")   # partial line, no newline
    sys.stdout.flush()
    """)


def fake_source(script):
    return TelemetrySource(kind="nvidia_smi", sample_interval_ms=50,
                           command=(sys.executable, "-c", script))


def test_live_stream_parses_stamps_and_discards_partial_line():
    stream = open_stream(fake_source(FAKE_NVSMI))
    samples = list(stream)
    assert [s.rails[GPU_RAIL] for s in samples] == [13450.0, 14000.0]
    assert samples[0].t_ms <= samples[1].t_ms
    assert stream.premature_end  # the tool exited on its own


def test_live_stream_close_keeps_prior_samples():
    stream = open_stream(fake_source(
        "import time\n"
        "while True:\n"
        "    print('10.00 W', flush=True)\n"
        "    time.sleep(0.02)\n"))
    it = iter(stream)
    first = next(it)
    stream.close()
    rest = list(it)
    assert first.rails[GPU_RAIL] == 10000.0
    assert all(s.rails[GPU_RAIL] == 10000.0 for s in rest)


def test_live_spawn_failure_is_typed():
    src = TelemetrySource(kind="tegrastats", sample_interval_ms=1000,
                          command=("definitely-not-a-real-tool-xyz",))
    with pytest.raises(TelemetryError, match="not found"):
        list(open_stream(src))


# --- TelemetrySource validation --------------------------------------------------

def test_source_validation():
    with pytest.raises(ConfigError):
        TelemetrySource(kind="magic")
    with pytest.raises(ConfigError):
        TelemetrySource(kind="tegrastats", sample_interval_ms=10)
    with pytest.raises(ConfigError):
        TelemetrySource(kind="recorded_log")  # no path
    with pytest.raises(ConfigError):
        TelemetrySource(kind="recorded_log", path="x", dialect="exotic")
    assert DEFAULT_TX2_SELECTION.mode == "sum"
