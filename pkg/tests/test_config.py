import textwrap

import pytest

from hmprior.config import env_overrides, load_config, parse_config
from hmprior.engine import ORACLE
from hmprior.errors import ConfigError
from hmprior.models import LinearGaussianModel

LINEAR = textwrap.dedent("""\
    model:
      name: linear_gaussian
      params: {a: 0.0, b: 1.0, c: 1.0}
    box:
      lower: [-1.0]
      upper: [1.0]
      names: [lam]
    constraints:
      - summary: S1
        implausible: [4.0]
        plausible: [0.5]
    waves:
      r: 20
      k: 200
      restarts: 5
    bank:
      size: 2000
    seed: 7
""")


@pytest.fixture
def config_file(tmp_path):
    def write(text=LINEAR, name="run.yaml"):
        path = tmp_path / name
        path.write_text(text)
        return path
    return write


def test_load_resolves_every_section(config_file):
    cfg = load_config(config_file(), environ={})
    assert isinstance(cfg.model, LinearGaussianModel)
    assert cfg.box.names == ("lam",)
    assert cfg.constraints.summaries == (0,)
    assert cfg.constraints.constraints[0].implausible == (4.0,)
    assert (cfg.waves.r, cfg.waves.k, cfg.waves.seed, cfg.waves.bank_size) == (20, 200, 7, 2000)
    assert cfg.seed == 7 and cfg.threads == 1
    assert cfg.grid == (100, 100)
    assert str(cfg.output) == "out"


def test_environment_and_command_line_overrides(config_file):
    environ = {"HMPRIOR_WAVES__R": "40", "HMPRIOR_SEED": "11", "HMPRIOR_THREADS": "4",
               "HMPRIOR_LOG_LEVEL": "DEBUG", "PATH": "/bin"}
    assert env_overrides(environ) == {"waves.r": 40, "seed": 11, "threads": 4}
    cfg = load_config(config_file(), overrides={"seed": 12, "waves.mode": ORACLE}, environ=environ)
    assert cfg.waves.r == 40
    assert cfg.seed == 12 and cfg.waves.seed == 12
    assert cfg.threads == 4
    assert cfg.waves.mode == ORACLE


def test_deterministic_forces_one_thread(config_file):
    cfg = load_config(config_file(), overrides={"threads": 8, "deterministic": True}, environ={})
    assert cfg.threads == 1
    assert cfg.waves.threads == 1


def test_hash_follows_the_effective_configuration(config_file):
    path = config_file()
    first = load_config(path, environ={})
    again = load_config(path, environ={})
    other = load_config(path, overrides={"seed": 8}, environ={})
    assert first.sha256 == again.sha256
    assert first.sha256 != other.sha256


def test_summary_by_index(config_file):
    cfg = load_config(config_file(LINEAR.replace("summary: S1", "summary: 0")), environ={})
    assert cfg.constraints.summaries == (0,)


def test_unknown_summary_reports_its_line(config_file):
    with pytest.raises(ConfigError) as info:
        load_config(config_file(LINEAR.replace("summary: S1", "summary: S9")), environ={})
    assert info.value.field == "constraints.0.summary"
    assert info.value.line == 9


def test_yaml_syntax_error_reports_its_line(config_file):
    with pytest.raises(ConfigError) as info:
        load_config(config_file("model:\n  name: [unclosed\nbox: {}\n"), environ={})
    assert info.value.line is not None


@pytest.mark.parametrize("old, new, field", [
    ("name: linear_gaussian", "name: poisson", "model.name"),
    ("lower: [-1.0]", "lower: [-1.0, 0.0]", "box"),
    ("  r: 20", "  r: 20\n  speed: 3", "waves.speed"),
    ("  r: 20", "  r: 25", "waves"),
    ("  size: 2000", "  size: 0", "bank.size"),
    ("seed: 7", "seed: seven", "seed"),
])
def test_invalid_settings_name_the_field(config_file, old, new, field):
    with pytest.raises(ConfigError) as info:
        load_config(config_file(LINEAR.replace(old, new)), environ={})
    assert info.value.field == field


def test_missing_sections_and_files(tmp_path, config_file):
    with pytest.raises(ConfigError) as info:
        parse_config({"model": {"name": "linear_gaussian"}})
    assert info.value.field == "box"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.yaml", environ={})
    with pytest.raises(ConfigError):
        load_config(config_file(""), environ={})
    with pytest.raises(ConfigError):
        load_config(config_file("- 1\n- 2\n"), environ={})


def test_grid_counts(config_file):
    cfg = load_config(config_file(LINEAR + "grid:\n  counts: [3, 4]\n"), environ={})
    assert cfg.grid == (3, 4)
    with pytest.raises(ConfigError) as info:
        load_config(config_file(LINEAR + "grid:\n  counts: [3]\n"), environ={})
    assert info.value.field == "grid.counts"
