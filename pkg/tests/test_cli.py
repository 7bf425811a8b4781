import json
import math

import jsonschema
import numpy as np
import pytest
import yaml

from slowlight.cli import (
    DEFAULTS,
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    EXIT_OK,
    PARTIAL_MARKER,
    SCENARIOS,
    SUMMARY_SCHEMA,
    ConfigError,
    main,
    parse_config,
)

SMALL_ADIABATON = """\
scenario: adiabaton-propagation
grid: {tau_min: 0, tau_max: 600, n_tau: 501, zeta_min: 0, zeta_max: 0.5, n_zeta: 51}
medium: {g: 100}
theta: {family: tanh-kink, amplitude: 1.5707963267948966, width: 0.5, center: -1.0}
reference: {tau_ref: 0, xi_ref: -6}
output: {stride_tau: 7, stride_zeta: 5}
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run(tmp_path, text, *extra, out="out"):
    cfg = write(tmp_path, text)
    return main(["run", str(cfg), "--out", str(tmp_path / out), *extra])


def summary(tmp_path, out="out"):
    return json.loads((tmp_path / out / "summary.json").read_text())


# -------------------------------------------------------------------- parsing


def test_minimal_config_gets_defaults():
    cfg = parse_config("scenario: adiabaton-propagation\nmedium: {g: 50}\n")
    assert cfg.blocks["medium"]["g"] == 50.0
    assert cfg.blocks["grid"] == DEFAULTS["adiabaton-propagation"]["grid"]
    assert cfg.blocks["theta"]["family"] == "tanh-kink"
    assert cfg.seed == 0


def test_partial_block_is_merged_with_defaults():
    cfg = parse_config("scenario: speed-measurement\nmedium: {g: 100}\ngrid: {n_tau: 1000}\n")
    assert cfg.blocks["grid"]["n_tau"] == 1000 and cfg.blocks["grid"]["tau_max"] == 2400.0


@pytest.mark.parametrize(
    "text, code, fragment, line",
    [
        ("scenario: frobnicate\n", "unknown-scenario", "unknown scenario", 1),
        ("scenario: adiabaton-propagation\nmedium:\n  g: -1\n", "non-positive", "medium.g must be > 0", 3),
        ("scenario: adiabaton-propagation\n", "missing-block", "needs a 'medium' block", None),
        ("scenario: lz-scan\nmedium: {g: 1}\n", "missing-block", "'envelope'", None),
        ("scenario: rabi-check\ngrid:\n  n_tau: 5\n  wobble: 1\n", "unknown-key", "grid.wobble", 4),
        ("scenario: rabi-check\nfoo: 1\n", "unknown-key", "foo", 2),
        ("scenario: rabi-check\ngrid: {n_tau: 1}\n", "invalid-value", "grid.n_tau", 2),
        ("scenario: rabi-check\ngrid: {tau_max: -1}\n", "invalid-value", "grid.tau_max must exceed", 2),
        ("scenario: lz-scan\nenvelope: {family: lorentzian-hump, width: 0}\n", "non-positive", "envelope.width", 2),
        ("scenario: lz-scan\nenvelope: {family: boxcar}\n", "invalid-value", "envelope.family", 2),
        ("scenario: adiabaton-propagation\nmedium: {g: 1}\nloss: {wavelength: 1}\n", "missing-block", "loss.", 3),
        ("scenario: adiabaton-propagation\nmedium: {g: 1}\nloss: {wavelength: 1, density_param: 0, "
         "pulse_scale: 1, propagation_length: 1}\n", "non-positive", "loss.density_param", 3),
        ("scenario: speed-measurement\nmedium: {g: 1}\nenvelope: {family: lorentzian-hump}\n", "invalid-value",
         "constant", 3),
        ("scenario: adiabaton-propagation\nmedium: {g: 0}\n", "non-positive", "vacuum", 2),
        ("scenario: rabi-check\nseed: -3\n", "invalid-value", "seed", 2),
        ("scenario: rabi-check\nmedium: {g: yes}\n", "invalid-value", "medium.g must be a number", 2),
        ("scenario: [unclosed\n", "parse-error", "YAML", None),
        ("- just\n- a list\n", "parse-error", "mapping", 1),
    ],
)
def test_config_errors(text, code, fragment, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    err = info.value
    assert err.code == code
    assert fragment in str(err)
    if line is not None:
        assert err.line == line and str(err).startswith(f"line {line}:")


def test_config_error_exit_code(tmp_path, capsys):
    assert run(tmp_path, "scenario: frobnicate\n") == EXIT_CONFIG
    assert "unknown scenario" in capsys.readouterr().err
    assert run(tmp_path, "scenario: adiabaton-propagation\nmedium: {g: -2}\n") == EXIT_CONFIG
    assert "medium.g must be > 0" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["run", str(tmp_path / "nope.yaml")]) == EXIT_CONFIG


def test_print_defaults_round_trip(capsys):
    assert main(["--print-defaults"]) == EXIT_OK
    docs = list(yaml.safe_load_all(capsys.readouterr().out))
    assert [d["scenario"] for d in docs] == list(SCENARIOS)
    for d in docs:
        cfg = parse_config(yaml.safe_dump(d))
        assert cfg.scenario == d["scenario"]
    assert main(["--print-defaults", "rabi-check"]) == EXIT_OK
    assert yaml.safe_load(capsys.readouterr().out)["rabi"]["omega0"] == 1.0
    assert main(["--print-defaults", "nonsense"]) == EXIT_CONFIG


def test_no_command_is_a_usage_error():
    assert main([]) == EXIT_CONFIG


# -------------------------------------------------------------------- running


def test_rabi_check_run(tmp_path):
    assert run(tmp_path, "scenario: rabi-check\n") == EXIT_OK
    s = summary(tmp_path)
    assert s["results"]["max_deviation_from_closed_form"] <= 1e-8
    assert s["results"]["vacuum_propagation"] is True
    assert "measured_speed" not in s["results"]
    for name in ("fields.csv", "atoms.csv", "diagnostics.csv"):
        assert (tmp_path / "out" / name).exists()
    assert not (tmp_path / "out" / PARTIAL_MARKER).exists()


def test_lz_scan_run(tmp_path):
    assert run(tmp_path, "scenario: lz-scan\nenvelope: {family: lorentzian-hump, amplitude: 2.0}\n") == EXIT_OK
    rows = summary(tmp_path)["results"]["lz"]
    assert [r["product"] for r in rows] == [1.0, 2.0, 4.0]
    for r in rows:
        assert r["exponent"] == pytest.approx(math.pi * r["product"] / 4, abs=1e-6)
    assert summary(tmp_path)["results"]["immunity"]["sets_match"] is True


def test_small_adiabaton_run_report(tmp_path):
    text = SMALL_ADIABATON + "loss: {wavelength: 1.0, density_param: 1.0, pulse_scale: 100.0, propagation_length: 100.0}\n"
    assert run(tmp_path, text) == EXIT_OK
    r = summary(tmp_path)["results"]
    assert 0.5 <= r["excitation_ratio_measured_over_predicted"] <= 2.0
    assert r["adiabaticity_ratio"] == pytest.approx(1.0 / (100.0**2 * 0.25))
    assert r["loss_rate_estimate"] == pytest.approx(0.32 * math.pi)
    assert r["slow_light_formula_speed"] == pytest.approx(2 * r["comoving_characteristic_speed"])


def test_stationary_dark_run_has_flat_diagnostics(tmp_path):
    text = SMALL_ADIABATON + "initial: dark\n"
    text = text.replace("family: tanh-kink, amplitude: 1.5707963267948966", "family: constant, amplitude: 0.6")
    assert run(tmp_path, text) == EXIT_OK
    s = summary(tmp_path)
    assert s["diagnostics"]["max_norm_drift"] <= 1e-10
    assert s["diagnostics"]["max_excited_population"] <= 1e-10
    assert s["diagnostics"]["max_slice_conservation_residual"] <= 1e-10
    assert s["results"]["relative_l2_deviation"] <= 1e-10


def test_outputs_are_deterministic(tmp_path):
    assert run(tmp_path, SMALL_ADIABATON, "--seed", "7", out="a") == EXIT_OK
    assert run(tmp_path, SMALL_ADIABATON, "--seed", "7", out="b") == EXIT_OK
    for name in ("fields.csv", "atoms.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # only the echoed output directory may differ
    a, b = summary(tmp_path, "a"), summary(tmp_path, "b")
    a["config"]["output"].pop("directory"), b["config"]["output"].pop("directory")
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert summary(tmp_path, "a")["config"]["seed"] == 7


def test_csv_round_trip_and_stride(tmp_path):
    from slowlight.scenarios import run_adiabaton_propagation

    assert run(tmp_path, SMALL_ADIABATON) == EXIT_OK
    cfg = parse_config(SMALL_ADIABATON)
    rec = run_adiabaton_propagation(cfg.adiabaton_spec(), cfg.grid()).record
    table = np.loadtxt(tmp_path / "out" / "fields.csv", delimiter=",", skiprows=1)
    zi, ti = np.arange(0, 51, 5), np.arange(0, 501, 7)
    assert table.shape == (zi.size * ti.size, 6)
    expect = rec.fields[np.ix_(zi, ti)].reshape(-1, 2)
    np.testing.assert_array_equal(table[:, 2] + 1j * table[:, 3], expect[:, 0])
    np.testing.assert_array_equal(table[:, 4] + 1j * table[:, 5], expect[:, 1])
    header = (tmp_path / "out" / "atoms.csv").read_text().splitlines()[0]
    assert header == "tau,zeta,re_psi_plus,im_psi_plus,re_psi_minus,im_psi_minus,re_psi_e,im_psi_e"


def test_resolution_scale(tmp_path):
    assert run(tmp_path, "scenario: rabi-check\n", "--resolution-scale", "2") == EXIT_OK
    assert summary(tmp_path)["config"]["grid"]["n_tau"] == 8001
    assert run(tmp_path, "scenario: rabi-check\n", "--resolution-scale", "-1") == EXIT_CONFIG


def test_numerical_failure_leaves_marker(tmp_path, capsys):
    text = SMALL_ADIABATON.replace("n_tau: 501", "n_tau: 61")
    assert run(tmp_path, text) == EXIT_NUMERICAL
    marker = tmp_path / "out" / PARTIAL_MARKER
    assert marker.exists() and "Error" in marker.read_text()
    assert "numerical failure" in capsys.readouterr().err


@pytest.mark.parametrize("text", ["scenario: rabi-check\n", SMALL_ADIABATON,
                                  "scenario: lz-scan\nenvelope: {family: lorentzian-hump}\n"])
def test_summary_schema(tmp_path, text):
    assert run(tmp_path, text) == EXIT_OK
    s = summary(tmp_path)
    jsonschema.validate(s, SUMMARY_SCHEMA)
    assert s["schema_version"] == "1.0"
