import json

import pytest

from edeqmap.config import (
    ConfigurationError,
    EdemConfig,
    EdeqConfig,
    RemeshConfig,
    load_config,
    thread_limit,
)
from edeqmap.constants import DEFAULT_EDEM_EPSILON, DEFAULT_EDEQ_EPSILON, DEFAULT_N_MAX


class TestDefaults:
    def test_every_default_is_materialized(self):
        config = load_config("edem", {"input": "pig.obj"})
        data = config.to_dict()
        assert data["radii"] == [1.0, 1.0, 1.0]
        assert data["n_max"] == DEFAULT_N_MAX
        assert data["epsilon"] == DEFAULT_EDEM_EPSILON
        assert data["population"] == "area"
        assert data["dump_mu"] is False

    def test_edeq_uses_the_energy_threshold(self):
        assert load_config("edeq", {"input": "duck.obj"}).epsilon == DEFAULT_EDEQ_EPSILON
        remesh = load_config("remesh", {"input": "duck.obj", "method": "edeq"})
        assert remesh.epsilon == DEFAULT_EDEQ_EPSILON
        remesh = load_config("remesh", {"input": "duck.obj", "method": "fecm"})
        assert remesh.epsilon == DEFAULT_EDEM_EPSILON

    def test_radii_text_is_normalized(self):
        config = load_config("edem", {"input": "pig.obj", "radii": "sphere"})
        assert config.radii == (1.0, 1.0, 1.0)
        config = load_config("edem", {"input": "pig.obj", "radii": "1,2,3"})
        assert config.to_dict()["radii"] == [1.0, 2.0, 3.0]


class TestPrecedence:
    def test_settings_then_file_then_options(self, settings, tmp_path):
        settings.EDEQMAP_DT = 0.05
        settings.EDEQMAP_N_MAX = 40
        settings.EDEQMAP_ALPHA = 2.0
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"n_max": 60, "alpha": 3.0}))

        config = load_config(
            "edeq", {"input": "duck.obj", "config": str(path), "alpha": 4.0, "dt": None}
        )
        assert config.dt == 0.05
        assert config.n_max == 60
        assert config.alpha == 4.0

    def test_written_config_reproduces_the_run(self, tmp_path):
        first = load_config(
            "edeq", {"input": "duck.obj", "K": 5, "db": 0.1, "radii": "1,1,1.5"}
        )
        path = tmp_path / "config.json"
        first.write(path)
        second = load_config("edeq", {"config": str(path)})
        assert second.to_dict() == first.to_dict()

    def test_unknown_file_keys(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"input": "duck.obj", "timestep": 0.1}))
        with pytest.raises(ConfigurationError, match="unknown keys in config file: timestep"):
            load_config("edem", {"config": str(path)})

    def test_unreadable_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(ConfigurationError, match="not valid JSON"):
            load_config("edem", {"config": str(path)})


class TestValidation:
    def test_input_required(self):
        with pytest.raises(ConfigurationError, match="--input"):
            load_config("edem", {})

    def test_metrics_needs_a_parameterization(self):
        with pytest.raises(ConfigurationError, match="--param"):
            load_config("metrics", {"input": "pig.obj"})

    def test_negative_alpha(self):
        with pytest.raises(ConfigurationError, match="alpha must be nonnegative, got -1.0"):
            load_config("edeq", {"input": "duck.obj", "alpha": -1.0})
        with pytest.raises(ConfigurationError):
            EdeqConfig(alpha=-0.5).validate()

    def test_target_too_small(self):
        with pytest.raises(ConfigurationError, match="target vertices must be at least 12, got 4"):
            load_config("remesh", {"input": "pig.obj", "target_vertices": 4})

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError, match="method must be one of"):
            RemeshConfig(method="distmesh").validate()

    @pytest.mark.parametrize(
        "options",
        [{"dt": 0.0}, {"n_max": 0}, {"epsilon": -1e-3}, {"log_every": 0}, {"K": 0}],
    )
    def test_nonpositive_controls(self, options):
        with pytest.raises(ConfigurationError):
            load_config("edeq", {"input": "duck.obj", **options})

    def test_bad_population(self):
        with pytest.raises(ConfigurationError, match="population must be"):
            load_config("edem", {"input": "pig.obj", "population": "gaussian"})

    def test_bad_radii(self):
        with pytest.raises(ConfigurationError, match="radii must be positive"):
            load_config("edem", {"input": "pig.obj", "radii": "1,0,1"})

    def test_edem_config_validates_itself(self):
        EdemConfig().validate()
        with pytest.raises(ConfigurationError):
            EdemConfig(dt=-0.1).validate()


class TestThreads:
    def test_environment_variable(self, monkeypatch):
        monkeypatch.setenv("EDEQ_THREADS", "3")
        assert thread_limit() == 3

    def test_settings_fallback(self, monkeypatch, settings):
        monkeypatch.delenv("EDEQ_THREADS")
        settings.EDEQMAP_THREADS = 2
        assert thread_limit() == 2

    @pytest.mark.parametrize("value", ["zero", "0"])
    def test_invalid_values(self, monkeypatch, value):
        monkeypatch.setenv("EDEQ_THREADS", value)
        with pytest.raises(ConfigurationError):
            thread_limit()
