import json
import math
import subprocess
import sys

import numpy as np
import pytest

from membrane_works import io
from membrane_works.cli import main
from membrane_works.membrane import reference_membrane
from membrane_works.spectral import synth_spectrum

from oracles import count_modes_below


def run(tmp_path, name, *argv):
    out = tmp_path / name
    code = main([*argv, "--out", str(out)])
    return code, out


def load(out, name):
    return json.loads((out / name).read_text())


def manifest(out):
    return load(out, "manifest.json")


# -- synth -----------------------------------------------------------------------


def test_synth_repeated_seed_is_byte_identical(tmp_path):
    files = []
    for name in ("a", "b"):
        code, out = run(tmp_path, name, "synth", "spectrum", "--noise", "0.1", "--seed", "7")
        assert code == 0
        files.append(out)
    assert (files[0] / "spectrum.csv").read_bytes() == (files[1] / "spectrum.csv").read_bytes()
    m0, m1 = manifest(files[0]), manifest(files[1])
    assert m0.pop("wall_clock_s") >= 0 and m1.pop("wall_clock_s") >= 0
    assert m0 == m1
    code, out = run(tmp_path, "c", "synth", "spectrum", "--noise", "0.1", "--seed", "8")
    assert (out / "spectrum.csv").read_bytes() != (files[0] / "spectrum.csv").read_bytes()


@pytest.mark.parametrize("kind", ["mode-table", "spectrum", "ringdown", "freq-series"])
def test_synth_every_kind_round_trips(tmp_path, kind):
    code, out = run(tmp_path, kind, "synth", kind, "--seed", "3")
    assert code == 0
    (path,) = [out / f for f in manifest(out)["outputs"]]
    reader = {"mode-table": io.read_mode_table, "spectrum": io.read_spectrum,
              "ringdown": io.read_ringdown, "freq-series": io.read_series}[kind]
    reader(path)
    assert manifest(out)["seed"] == 3


def test_synth_mode_table_cutoff_matches_enumeration(tmp_path):
    code, out = run(tmp_path, "m", "synth", "mode-table", "--max-freq-hz", "2.556e6")
    assert code == 0
    modes = io.read_mode_table(out / "mode_table.csv")
    spec = reference_membrane()
    expected = count_modes_below(spec.side_length, spec.density, spec.stress_x, spec.stress_y, 2.556e6)
    assert len(modes) == expected == 60


def test_synth_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["synth", "phonons", "--out", str(tmp_path)])
    assert info.value.code == 2
    code, _ = run(tmp_path, "x", "synth", "mode-table", "--count", "5", "--max-freq-hz", "1e6")
    assert code == 2


# -- fit-stress ------------------------------------------------------------------


def test_fit_stress_recovers_generator(tmp_path):
    run(tmp_path, "gen", "synth", "mode-table", "--count", "57")
    code, out = run(tmp_path, "fit", "fit-stress", str(tmp_path / "gen" / "mode_table.csv"))
    assert code == 0
    res = load(out, "fit_stress.json")
    spec = reference_membrane()
    assert res["stress_x_pa"] == pytest.approx(spec.stress_x, rel=1e-6)
    assert res["stress_y_pa"] == pytest.approx(spec.stress_y, rel=1e-6)
    rows = io.read_stress_plot(out / "fit_stress_plot.csv")
    assert len(rows) == 57
    m = manifest(out)
    assert list(m["input_digests"].values())[0] == io_digest(tmp_path / "gen" / "mode_table.csv")


def io_digest(path):
    import hashlib
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_fit_stress_prefilled_equals_auto_assigned(tmp_path):
    run(tmp_path, "a", "synth", "mode-table", "--count", "57", "--noise", "5", "--seed", "4")
    run(tmp_path, "b", "synth", "mode-table", "--count", "57", "--noise", "5", "--seed", "4", "--unassigned")
    _, fa = run(tmp_path, "fa", "fit-stress", str(tmp_path / "a" / "mode_table.csv"))
    _, fb = run(tmp_path, "fb", "fit-stress", str(tmp_path / "b" / "mode_table.csv"))
    assert load(fa, "fit_stress.json") == load(fb, "fit_stress.json")


def test_fit_stress_json_format_embeds_plot(tmp_path):
    run(tmp_path, "gen", "synth", "mode-table", "--count", "20")
    code, out = run(tmp_path, "fit", "fit-stress", str(tmp_path / "gen" / "mode_table.csv"), "--format", "json")
    assert code == 0
    assert len(load(out, "fit_stress.json")["plot"]) == 20
    assert not (out / "fit_stress_plot.csv").exists()


def test_fit_stress_empty_file(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("")
    code, out = run(tmp_path, "o", "fit-stress", str(p))
    assert code == 2
    assert "no modes" in capsys.readouterr().err
    assert manifest(out)["status"] == "validation_error"


def test_fit_stress_rank_deficient_is_computation_error(tmp_path, capsys):
    p = tmp_path / "diag.csv"
    p.write_text("m,n,freq_hz,q\n1,1,390000.0,\n2,2,780000.0,\n")
    code, _ = run(tmp_path, "o", "fit-stress", str(p))
    assert code == 3
    assert "separable" in capsys.readouterr().err


def test_fit_stress_malformed_row(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    p.write_text("m,n,freq_hz,q\n3,1,868700.0,\n1,3,875540\n")
    code, _ = run(tmp_path, "o", "fit-stress", str(p))
    assert code == 2
    assert "bad.csv:3" in capsys.readouterr().err


# -- fit-peak / ringdown ---------------------------------------------------------


def test_fit_peak_q(tmp_path):
    run(tmp_path, "gen", "synth", "spectrum")
    code, out = run(tmp_path, "fit", "fit-peak", str(tmp_path / "gen" / "spectrum.csv"))
    assert code == 0
    res = load(out, "fit_peak.json")
    assert res["q"] == pytest.approx(1.07e8, rel=0.01)
    assert res["center_hz"] == pytest.approx(871.93e3, abs=1e-6)


def test_fit_peak_flat_spectrum_fails(tmp_path):
    p = tmp_path / "flat.csv"
    f = np.linspace(1e6 - 1, 1e6 + 1, 101)
    io.write_spectrum(p, type(synth_spectrum(1e6, 1.0))(f, np.ones_like(f)))
    code, _ = run(tmp_path, "o", "fit-peak", str(p))
    assert code == 3


def test_fit_peak_truncated_file(tmp_path, capsys):
    run(tmp_path, "gen", "synth", "spectrum")
    p = tmp_path / "gen" / "spectrum.csv"
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:40]) + "\n" + lines[40].split(",")[0] + "\n")
    code, _ = run(tmp_path, "o", "fit-peak", str(p))
    assert code == 2
    assert "spectrum.csv:41" in capsys.readouterr().err


def test_ringdown_recovers_rate(tmp_path):
    run(tmp_path, "gen", "synth", "ringdown", "--rate", "4.4e-3")
    code, out = run(tmp_path, "fit", "ringdown", str(tmp_path / "gen" / "ringdown.csv"))
    assert code == 0
    assert load(out, "ringdown.json")["energy_decay_rate_hz"] == pytest.approx(4.4e-3, rel=1e-6)


def test_ringdown_growing_trace_fails(tmp_path):
    p = tmp_path / "grow.csv"
    t = [float(x) for x in range(600)]
    p.write_text("time_s,amplitude,gate\n" + "".join(
        f"{x!r},{math.exp(1e-3 * x)!r},{int((x // 60) % 2 == 0)}\n" for x in t))
    code, _ = run(tmp_path, "o", "ringdown", str(p))
    assert code == 3


def test_ringdown_bad_gate(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("time_s,amplitude,gate\n0,1,1\n1,0.9,yes\n")
    code, _ = run(tmp_path, "o", "ringdown", str(p))
    assert code == 2


# -- allan -----------------------------------------------------------------------


def test_allan_white_noise(tmp_path):
    run(tmp_path, "gen", "synth", "freq-series", "--n-samples", "16384", "--sample-interval-s", "5")
    code, out = run(tmp_path, "a", "allan", str(tmp_path / "gen" / "freq_series.csv"))
    assert code == 0
    fit = load(out, "allan.json")["noise_fit"]
    assert fit["exponent"] == pytest.approx(-0.5, abs=0.1)
    assert fit["white_noise_consistent"] is True
    curve = io.read_allan_curve(out / "allan.csv")
    np.testing.assert_allclose(np.log2(curve.tau / 5.0), np.arange(len(curve.tau)))


def test_allan_constant_series_warns_and_succeeds(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("# f0_hz=885390.0\ntime_s,freq_hz\n" + "".join(f"{i}.0,885390.0\n" for i in range(64)))
    code, out = run(tmp_path, "o", "allan", str(p))
    assert code == 0
    assert np.all(io.read_allan_curve(out / "allan.csv").sigma == 0)
    payload = load(out, "allan.json")
    assert payload["noise_fit"] is None and payload["noise_fit_error"]
    assert any("noise-model fit failed" in w for w in manifest(out)["warnings"])


def test_allan_anchor_amplitude(tmp_path):
    # three alternating samples at tau0 = 3e4 s give one Allan point sigma = sqrt(2) delta / f0
    f0 = 885.39e3
    delta = 6e-10 * f0 / math.sqrt(2)
    p = tmp_path / "anchor.csv"
    p.write_text(f"# f0_hz={f0!r}\ntime_s,freq_hz\n" + "".join(
        f"{i * 3e4!r},{f0 + (delta if i % 2 == 0 else -delta)!r}\n" for i in range(3)))
    code, out = run(tmp_path, "o", "allan", str(p), "--exponent", "-0.5")
    assert code == 0
    curve = io.read_allan_curve(out / "allan.csv")
    assert curve.tau.tolist() == [3e4]
    assert curve.sigma[0] == pytest.approx(6e-10, rel=1e-6)
    amp = load(out, "allan.json")["noise_fit"]["amplitude"]
    assert amp == pytest.approx(6e-10 * math.sqrt(3e4), rel=0.01)
    assert amp == pytest.approx(1.04e-7, rel=0.01)


def test_allan_sample_interval_override(tmp_path):
    run(tmp_path, "gen", "synth", "freq-series", "--n-samples", "256", "--sample-interval-s", "5")
    _, out = run(tmp_path, "a", "allan", str(tmp_path / "gen" / "freq_series.csv"), "--sample-interval", "2.5")
    assert code_ok(out)
    assert load(out, "allan.json")["sample_interval_s"] == 2.5


def code_ok(out):
    return manifest(out)["status"] == "ok"


def test_allan_missing_f0(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("time_s,freq_hz\n0,1\n1,1\n2,1\n")
    code, _ = run(tmp_path, "o", "allan", str(p))
    assert code == 2


# -- simulate-swap ---------------------------------------------------------------


def test_simulate_swap_lossless(tmp_path):
    code, out = run(tmp_path, "o", "simulate-swap", "--lossless")
    assert code == 0
    assert load(out, "swap.json")["transfer_efficiency"] == pytest.approx(1.0, abs=1e-6)


def test_simulate_swap_anchored_defaults(tmp_path):
    code, out = run(tmp_path, "o", "simulate-swap", "--band")
    assert code == 0
    res = load(out, "swap.json")
    assert 0.70 <= res["transfer_efficiency"] <= 0.85
    band = res["efficiency_band"]
    assert band["low"] <= 0.7818 <= band["high"]
    # oscillation convention: a full there-and-back cycle takes 2.1 s
    assert 2 * res["exchange_time_s"] == pytest.approx(2.1, rel=0.05)
    cols = io.read_trace(out / "swap_trace.csv")
    assert cols["time_s"][-1] >= 10.0
    assert set(cols["phase_label"]) == {"cooling", "excitation", "swapping", "readout"}


def test_simulate_swap_exchange_convention(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[swap]\nperiod_convention = exchange\n")
    code, out = run(tmp_path, "o", "simulate-swap", "--config", str(cfg), "--format", "json")
    assert code == 0
    res = load(out, "swap.json")
    assert res["exchange_time_s"] == pytest.approx(2.1, rel=0.05)
    assert 0.70 <= res["transfer_efficiency"] <= 0.85
    assert str(cfg) in manifest(out)["input_digests"]


def test_simulate_swap_mismatch_monotone(tmp_path):
    effs = []
    for i, mis in enumerate([0.0, 0.02, 0.05, 0.1, 0.2]):
        code, out = run(tmp_path, f"m{i}", "simulate-swap", "--mismatch-hz", str(mis), "--format", "json")
        assert code == 0
        effs.append(load(out, "swap.json")["transfer_efficiency"])
    assert all(a > b for a, b in zip(effs, effs[1:]))


def test_simulate_swap_too_short_is_computation_error(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[swap]\nduration_s = 0.5\n")
    code, _ = run(tmp_path, "o", "simulate-swap", "--config", str(cfg), "--format", "json")
    assert code == 3


def test_simulate_swap_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[swap]\nperiod_ms = 2100\n")
    code, _ = run(tmp_path, "o", "simulate-swap", "--config", str(cfg))
    assert code == 2
    assert "period_ms" in capsys.readouterr().err


# -- plumbing --------------------------------------------------------------------


def test_jobs_must_be_positive(tmp_path):
    code, _ = run(tmp_path, "o", "synth", "spectrum", "--jobs", "0")
    assert code == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "membrane_works.cli", "synth", "spectrum", "--out", str(tmp_path)],
        capture_output=True, text=True, env={"MEMBRANE_WORKS_LOG": "error", "PATH": ""},
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "spectrum.csv").exists()
