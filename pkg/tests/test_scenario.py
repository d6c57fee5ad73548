"""Configuration layer: presets, TOML loading, canonical hashing."""

import dataclasses

import pytest

from oamqkd import scenario as sn
from oamqkd.exceptions import ConfigFileError


class TestPresets:
    def test_all_presets_build(self):
        for name in sn.PRESET_NAMES:
            sc = sn.preset(name)
            assert sc.protocol in sn.PROTOCOLS

    def test_unknown_preset_lists_available(self):
        with pytest.raises(ConfigFileError) as exc:
            sn.preset("nope")
        assert "paper-2d" in str(exc.value)

    def test_ideal_presets_strip_imperfections(self):
        sc = sn.preset("ideal-4d")
        assert sc.fiber.loss_db_per_km == 0.0
        assert sc.sorter.visibility_even == 1.0
        assert sc.detector.dark_prob_per_gate == 0.0
        assert sc.prep == sn.PrepErrorSpec()

    def test_calibrated_presets_share_detector(self):
        effs = {
            sn.preset(n).detector.efficiency
            for n in sn.PRESET_NAMES
            if n.startswith("paper")
        }
        assert len(effs) == 1

    def test_protocol_keys(self):
        assert sn.preset("paper-mux").dim_labels == ("MUX6", "MUX7")
        assert sn.preset("paper-2d").dim_labels == ("2D",)


class TestValidation:
    def test_basis_probs_must_sum_to_one(self):
        with pytest.raises(Exception):
            sn.SourceSpec(basis_probs=(0.9, 0.2))

    def test_bad_protocol(self):
        with pytest.raises(Exception):
            sn.Scenario(protocol="3D")

    def test_swapped_receivers_rejected(self):
        sc = sn.preset("paper-2d")
        with pytest.raises(Exception):
            dataclasses.replace(
                sc, receiver_sorted=sc.receiver_interf,
                receiver_interf=sc.receiver_sorted,
            )

    def test_negative_phase_sigma_rejected(self):
        with pytest.raises(Exception):
            sn.PrepErrorSpec(pol_phase_sigma_rad=-0.1)

    def test_arm_phase_quadrature(self):
        prep = sn.PrepErrorSpec(path_phase_sigma_rad=0.3, mz_phase_sigma_rad=0.4)
        assert prep.arm_phase_sigma_rad == pytest.approx(0.5)


class TestConfigDict:
    def test_empty_config_is_calibrated_default(self):
        assert sn.scenario_from_dict({}) == sn.preset("paper-default")

    def test_section_overlay_keeps_unmentioned_fields(self):
        sc = sn.scenario_from_dict({"detector": {"efficiency": 0.5}})
        base = sn.preset("paper-default")
        assert sc.detector.efficiency == 0.5
        assert sc.detector.dark_prob_per_gate == base.detector.dark_prob_per_gate
        assert sc.prep == base.prep

    def test_nested_intensities_overlay(self):
        sc = sn.scenario_from_dict({"source": {"intensities": {"mu": 0.02}}})
        assert sc.source.intensities.mu == 0.02
        assert sc.source.intensities.nu == sn.preset("paper-default").source.intensities.nu

    def test_unknown_section_path(self):
        with pytest.raises(ConfigFileError) as exc:
            sn.scenario_from_dict({"detectors": {}})
        assert "detectors" in str(exc.value)

    def test_unknown_key_path(self):
        with pytest.raises(ConfigFileError) as exc:
            sn.scenario_from_dict({"fiber": {"length": 1.0}})
        assert "fiber.length" in str(exc.value)

    def test_domain_error_carries_field_path(self):
        with pytest.raises(ConfigFileError) as exc:
            sn.scenario_from_dict({"detector": {"efficiency": 1.5}})
        assert "detector" in str(exc.value)

    def test_scalar_where_table_expected(self):
        with pytest.raises(ConfigFileError):
            sn.scenario_from_dict({"source": {"intensities": 0.011}})

    def test_table_where_scalar_expected(self):
        with pytest.raises(ConfigFileError):
            sn.scenario_from_dict({"detector": {"efficiency": {"a": 1}}})

    def test_er_table_int_keys(self):
        sc = sn.scenario_from_dict({"fiber": {"er_db": {"6": 20.0, "7": 21.0}}})
        assert sc.fiber.er_db[6] == 20.0

    def test_er_table_bad_key(self):
        with pytest.raises(ConfigFileError):
            sn.scenario_from_dict({"fiber": {"er_db": {"six": 20.0}}})

    def test_schema_version_accepted(self):
        sc = sn.scenario_from_dict({"schema_version": sn.SCHEMA_VERSION})
        assert sc == sn.preset("paper-default")

    def test_schema_version_rejected(self):
        with pytest.raises(ConfigFileError) as exc:
            sn.scenario_from_dict({"schema_version": 99})
        assert "schema_version" in str(exc.value)


class TestTomlFiles:
    def test_round_trip(self, tmp_path):
        cfg = tmp_path / "link.toml"
        cfg.write_text(
            "schema_version = 1\n"
            'protocol = "4D"\n'
            "[source]\nbasis_probs = [0.5, 0.5]\n"
            "[run]\npulses = 12345\nseed = 9\n"
        )
        sc = sn.load_scenario(str(cfg))
        assert sc.protocol == "4D"
        assert sc.source.basis_probs == (0.5, 0.5)
        assert sc.run.pulses == 12345
        assert sc.run.seed == 9

    def test_invalid_toml(self, tmp_path):
        cfg = tmp_path / "broken.toml"
        cfg.write_text("protocol = [unterminated\n")
        with pytest.raises(ConfigFileError):
            sn.load_scenario(str(cfg))


class TestCanonicalForm:
    def test_hash_stable(self):
        a = sn.preset("paper-2d")
        b = sn.preset("paper-2d")
        assert sn.scenario_hash(a) == sn.scenario_hash(b)

    def test_hash_sensitive_to_fields(self):
        a = sn.preset("paper-2d")
        b = dataclasses.replace(a, run=dataclasses.replace(a.run, seed=2))
        assert sn.scenario_hash(a) != sn.scenario_hash(b)

    def test_canonical_dict_is_plain(self):
        d = sn.canonical_dict(sn.preset("paper-mux"))
        assert isinstance(d, dict)
        assert d["protocol"] == "MUX"
        assert isinstance(d["source"]["intensities"]["mu"], float)
