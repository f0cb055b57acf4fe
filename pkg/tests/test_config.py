"""Config grammar: units, round trips, sweeps, presets."""

import math
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from dlczsim import config as cfgmod
from dlczsim import physics, source

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"

MINIMAL = """
seed = 7
atom.gamma = 5.2 MHz
atom.wavelength = 852.3 nm
atom.i_sat = 3.5 mW/cm^2
ensemble.od = 4.8
ensemble.waist = 100 um
readout.power = 0.3 mW
readout.alpha = 9.0
readout.dt = 1 ns
model.mean_excitation = 0.02
model.field1_cond_efficiency = 0.5
model.field1_noise = 0.0001
model.retrieval_efficiency = 0.47
model.chain_efficiency = 0.19
model.field2_background_rate = 0.0002
model.coherence_time = 700 ns
model.write_read_delay = 50 ns
timing.trial_period = 1 us
timing.write_duration = 50 ns
timing.read_duration = 840 ns
timing.apd_window = 1 us
timing.n_trials = 1000
"""


class TestParsing:
    def test_minimal_config(self):
        cfg = cfgmod.parse_config(MINIMAL)
        assert cfg.seed == 7
        assert cfg.atom.gamma == pytest.approx(2 * math.pi * 5.2e6)
        assert cfg.atom.i_sat == pytest.approx(35.0)
        assert cfg.readout.power == pytest.approx(0.3e-3)
        assert cfg.readout.read_duration == pytest.approx(840e-9)
        assert cfg.model.coherence_time == pytest.approx(700e-9)
        # chi defaults to auto: tied to the OD
        assert cfg.chi_auto
        assert cfg.readout.chi == pytest.approx(
            physics.chi_from_od(4.8, cfg.atom))

    def test_explicit_chi(self):
        cfg = cfgmod.parse_config(MINIMAL + "readout.chi = 3.8\n")
        assert not cfg.chi_auto
        assert cfg.readout.chi == 3.8

    def test_unitless_physical_quantity_rejected(self):
        bad = MINIMAL.replace("readout.power = 0.3 mW", "readout.power = 0.3")
        with pytest.raises(cfgmod.ConfigError, match="unit"):
            cfgmod.parse_config(bad)

    def test_unknown_unit_rejected(self):
        bad = MINIMAL.replace("0.3 mW", "0.3 furlongs")
        with pytest.raises(cfgmod.ConfigError, match="unit"):
            cfgmod.parse_config(bad)

    def test_unknown_key_rejected(self):
        with pytest.raises(cfgmod.ConfigError, match="unknown config keys"):
            cfgmod.parse_config(MINIMAL + "model.tachyon_flux = 3\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(cfgmod.ConfigError, match="duplicate"):
            cfgmod.parse_config(MINIMAL + "seed = 8\n")

    def test_missing_key_rejected(self):
        bad = "\n".join(line for line in MINIMAL.splitlines()
                        if not line.startswith("atom.gamma"))
        with pytest.raises(cfgmod.ConfigError, match="atom.gamma"):
            cfgmod.parse_config(bad)

    def test_comments_and_blank_lines(self):
        text = "# heading\n" + MINIMAL + "\n# trailing\n"
        assert cfgmod.parse_config(text).seed == 7

    def test_infinite_coherence(self):
        text = MINIMAL.replace("model.coherence_time = 700 ns",
                               "model.coherence_time = inf")
        assert math.isinf(cfgmod.parse_config(text).model.coherence_time)

    def test_inconsistent_atom_count_rejected(self):
        text = MINIMAL + "ensemble.n_atoms = 12345.0\n"
        with pytest.raises(cfgmod.ConfigError, match="n_atoms"):
            cfgmod.parse_config(text)

    def test_sweep_parsing(self):
        cfg = cfgmod.parse_config(MINIMAL + "sweep.od = 1.0, 2.0, 4.8\n")
        assert cfg.sweep.variable == "od"
        assert cfg.sweep.values == (1.0, 2.0, 4.8)
        with pytest.raises(cfgmod.ConfigError, match="one swept variable"):
            cfgmod.parse_config(MINIMAL + "sweep.od = 1.0\nsweep.power = 1 mW\n")


def random_config(draw):
    finite = lambda lo, hi: st.floats(lo, hi, allow_nan=False,
                                      allow_infinity=False)
    atom = physics.AtomSpec(gamma=draw(finite(1e6, 1e9)),
                            wavelength=draw(finite(4e-7, 2e-6)),
                            i_sat=draw(finite(1.0, 200.0)))
    ensemble = physics.EnsembleSpec(od=draw(finite(0.0, 10.0)),
                                    waist=draw(finite(1e-5, 1e-3)))
    read_duration = draw(finite(1e-7, 9e-7))
    timing = source.TrialTiming(
        trial_period=5e-6, write_duration=draw(finite(1e-8, 1e-7)),
        read_duration=read_duration, apd_window=2e-6,
        n_trials=draw(st.integers(0, 10 ** 7)))
    chi_auto = draw(st.booleans())
    chi = physics.chi_from_od(ensemble.od, atom) if chi_auto \
        else draw(finite(1.0, 8.0))
    readout = physics.ReadoutSpec(power=draw(finite(1e-6, 1e-2)),
                                  alpha=draw(finite(0.1, 30.0)), chi=chi,
                                  dt=draw(finite(5e-10, 5e-9)),
                                  read_duration=read_duration)
    model = source.SourceModel(
        mean_excitation=draw(finite(0.0, 2.0)),
        field1_cond_efficiency=draw(finite(0.0, 1.0)),
        field1_noise=draw(finite(0.0, 0.01)),
        retrieval_efficiency=draw(finite(0.0, 1.0)),
        chain_efficiency=draw(finite(0.0, 1.0)),
        field2_background_rate=draw(finite(0.0, 0.01)),
        coherence_time=draw(finite(1e-8, 1e-5)),
        write_read_delay=draw(finite(0.0, 1e-6)),
        number_law=draw(st.sampled_from(source.NUMBER_LAWS)),
        decoherence_law=draw(st.sampled_from(source.DECOHERENCE_LAWS)))
    return cfgmod.ExperimentConfig(
        atom=atom, ensemble=ensemble, readout=readout, model=model,
        timing=timing, seed=draw(st.integers(0, 2 ** 63 - 1)),
        chi_auto=chi_auto)


class TestRoundTrip:
    @settings(max_examples=150, deadline=None)
    @given(st.data())
    def test_parse_emit_identity(self, data):
        cfg = random_config(data.draw)
        assert cfgmod.parse_config(cfgmod.emit_config(cfg)) == cfg

    def test_hash_tracks_content(self):
        cfg = cfgmod.parse_config(MINIMAL)
        other = cfgmod.parse_config(MINIMAL.replace("seed = 7", "seed = 8"))
        assert cfg.config_hash != other.config_hash
        assert cfg.config_hash == cfgmod.parse_config(MINIMAL).config_hash

    def test_save_load(self, tmp_path):
        cfg = cfgmod.parse_config(MINIMAL + "sweep.delay = 0 ns, 100 ns\n")
        path = tmp_path / "c.cfg"
        cfgmod.save_config(cfg, path)
        assert cfgmod.load_config(path) == cfg


class TestSweepPoints:
    def test_od_sweep_binds_chi_and_retrieval(self):
        text = (MINIMAL + "sweep.od = 0.5, 4.0\n"
                "sweep.retrieval_scaling = saturating_quadratic\n"
                "sweep.retrieval_max = 0.5\nsweep.retrieval_od_half = 3.0\n")
        cfg = cfgmod.parse_config(text)
        point = cfg.at_sweep_point(0.5)
        assert point.sweep is None
        assert point.ensemble.od == 0.5
        assert point.readout.chi == pytest.approx(
            physics.chi_from_od(0.5, cfg.atom))
        assert point.model.retrieval_efficiency == pytest.approx(
            0.5 * 0.25 / (0.25 + 9.0))

    def test_power_and_delay_sweeps(self):
        cfg = cfgmod.parse_config(MINIMAL + "sweep.power = 1 mW, 2 mW\n")
        assert cfg.at_sweep_point(2e-3).readout.power == 2e-3
        roomy = MINIMAL.replace("timing.trial_period = 1 us",
                                "timing.trial_period = 2 us")
        cfg = cfgmod.parse_config(roomy + "sweep.delay = 0 ns, 350 ns\n")
        assert cfg.at_sweep_point(350e-9).model.write_read_delay == 350e-9

    def test_sweep_point_beyond_trial_period_rejected(self):
        cfg = cfgmod.parse_config(MINIMAL + "sweep.delay = 0 ns, 350 ns\n")
        with pytest.raises(ValueError, match="trial period"):
            cfg.at_sweep_point(350e-9)

    def test_mean_excitation_sweep(self):
        cfg = cfgmod.parse_config(MINIMAL + "sweep.mean_excitation = 0.001, 0.1\n")
        assert cfg.at_sweep_point(0.1).model.mean_excitation == 0.1


class TestPresets:
    @pytest.mark.parametrize("name", [
        "threshold_sweep.cfg", "power_sweep.cfg", "od_sweep.cfg",
        "delay_scan.cfg", "g2c_witness.cfg", "od_probe.cfg", "regions.cfg"])
    def test_preset_parses_and_round_trips(self, name):
        cfg = cfgmod.load_config(PRESET_DIR / name)
        assert cfgmod.parse_config(cfgmod.emit_config(cfg)) == cfg

    def test_power_sweep_preset_settings(self):
        cfg = cfgmod.load_config(PRESET_DIR / "power_sweep.cfg")
        assert cfg.readout.chi == 3.8
        assert cfg.readout.alpha == 9.0
        assert cfg.sweep.variable == "power"
        assert [round(v * 1e3, 3) for v in cfg.sweep.values] == \
            [2.1, 1.2, 0.6, 0.3, 0.15, 0.075]
        assert cfg.model.retrieval_efficiency == 0.47
        assert cfg.model.chain_efficiency == 0.19
