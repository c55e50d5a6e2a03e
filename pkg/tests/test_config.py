"""Tests for experiment configuration, profiles and the setup wizard"""

import json
import os
import sys
from unittest.mock import patch

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import bsdelab.config as config_module
from bsdelab.config import (
    ConfigManager,
    ExperimentConfig,
    apply_overrides,
    from_dict,
    interactive_setup,
    list_profiles,
    load_config,
    validate,
)


@pytest.fixture
def config_dir(tmp_path, monkeypatch):
    """Point the default profile store at a temporary directory."""
    path = tmp_path / 'profiles'
    monkeypatch.setattr(config_module, 'CONFIG_DIR', path)
    return path


def _write(path, data):
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


class TestValidate:
    def test_defaults_are_valid(self):
        for kind in config_module.KINDS:
            assert validate(ExperimentConfig(kind=kind)).kind == kind

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="Unknown experiment kind"):
            validate(ExperimentConfig(kind='simulate'))

    def test_unknown_terminal(self):
        with pytest.raises(ValueError, match="Unknown terminal value"):
            validate(ExperimentConfig(kind='solve', terminal={'name': 'cauchy'}))

    def test_terminal_without_name(self):
        with pytest.raises(ValueError, match="'name'"):
            validate(ExperimentConfig(kind='solve', terminal={'c': 1.0}))

    def test_sufficiency_product_for_bound(self):
        config = ExperimentConfig(kind='bound', lam=4.0, gamma=0.5, horizon=1.0)
        with pytest.raises(ValueError, match="must be below 1"):
            validate(config)

    def test_sufficiency_product_ignored_for_solve(self):
        assert validate(ExperimentConfig(kind='solve', lam=4.0, gamma=0.5))

    def test_counts_must_be_positive_integers(self):
        with pytest.raises(ValueError, match="n_steps"):
            validate(ExperimentConfig(kind='solve', n_steps=0))
        with pytest.raises(ValueError, match="n_samples"):
            validate(ExperimentConfig(kind='solve', n_samples=10.5))
        with pytest.raises(ValueError, match="max_workers"):
            validate(ExperimentConfig(kind='solve', max_workers=True))

    def test_seed_range(self):
        with pytest.raises(ValueError, match="seed"):
            validate(ExperimentConfig(kind='solve', seed=-1))
        with pytest.raises(ValueError, match="seed"):
            validate(ExperimentConfig(kind='solve', seed=2 ** 64))
        assert validate(ExperimentConfig(kind='solve', seed=2 ** 64 - 1))

    def test_mu_range(self):
        with pytest.raises(ValueError, match="mu"):
            validate(ExperimentConfig(kind='counterexample', mu=1.0))

    def test_radii_must_increase(self):
        with pytest.raises(ValueError, match="radii"):
            validate(ExperimentConfig(kind='integrability', radii=(20.0, 10.0)))

    def test_rungs_need_three_levels(self):
        with pytest.raises(ValueError, match="rungs"):
            validate(ExperimentConfig(kind='ladder', rungs=(4, 5)))

    def test_lattice_needs_markovian_terminal(self):
        config = ExperimentConfig(kind='ladder', method='lattice', terminal={'name': 'running_max'})
        with pytest.raises(ValueError, match="lattice"):
            validate(config)
        assert validate(ExperimentConfig(kind='integrability', method='lattice',
                                         terminal={'name': 'running_max'}))

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensional"):
            validate(ExperimentConfig(kind='solve', dimension=2))

    def test_piecewise_alpha(self):
        assert validate(ExperimentConfig(kind='solve', alpha={'breaks': [0.5], 'values': [1.0, 2.0]}))
        with pytest.raises(ValueError, match="piecewise alpha"):
            validate(ExperimentConfig(kind='solve', alpha={'breaks': [0.5], 'values': [1.0]}))

    def test_unknown_format(self):
        with pytest.raises(ValueError, match="format"):
            validate(ExperimentConfig(kind='solve', format='xml'))

    def test_samples_must_cover_the_basis(self):
        with pytest.raises(ValueError, match="too few"):
            validate(ExperimentConfig(kind='ladder', n_steps=5, n_samples=40, rungs=(0, 3)))
        with pytest.raises(ValueError, match="need at least 160"):
            validate(ExperimentConfig(kind='solve', basis='indicator', n_samples=100))
        with pytest.raises(ValueError, match="too few"):
            validate(ExperimentConfig(kind='bound', method='lattice', n_samples=40))
        assert validate(ExperimentConfig(kind='solve', method='lattice', n_samples=40))
        assert validate(ExperimentConfig(kind='phi-moment', n_samples=40))

    def test_unknown_generator(self):
        with pytest.raises(ValueError, match="Unknown generator"):
            validate(ExperimentConfig(kind='solve', generator={'name': 'quadratic'}))
        with pytest.raises(ValueError, match="'name'"):
            validate(ExperimentConfig(kind='solve', generator={'q': 0.5}))

    def test_generator_certificate_checked(self):
        config = ExperimentConfig(kind='solve', alpha=-5.0, generator={'name': 'sublinear'})
        with pytest.raises(ValueError, match="certificate"):
            validate(config)

    def test_sublinear_needs_constant_alpha(self):
        config = ExperimentConfig(kind='solve', alpha={'breaks': [0.5], 'values': [1.0, 2.0]},
                                  generator={'name': 'sublinear'})
        with pytest.raises(ValueError, match="constant alpha"):
            validate(config)


class TestTerminalFactory:
    def test_builds_named_terminals(self):
        assert ExperimentConfig(kind='solve').build_terminal().description == 'clamp(W_T,-2,2)'
        xi = ExperimentConfig(kind='solve', terminal={'name': 'counterexample'}, mu=0.7).build_terminal()
        assert xi.nonnegative

    def test_builds_named_generators(self):
        assert ExperimentConfig(kind='solve').build_generator().typical
        sublinear = {'name': 'sublinear', 'q': 0.5}
        gen = ExperimentConfig(kind='solve', generator=sublinear).build_generator()
        assert not gen.typical
        assert gen.dominating().typical
        assert gen.dominating().alpha == pytest.approx(0.5)
        constant = {'name': 'constant', 'c': -0.3}
        gen = ExperimentConfig(kind='solve', generator=constant).build_generator()
        assert gen.driver(0.0, np.zeros(3), np.ones((3, 1))).tolist() == [-0.3] * 3

    def test_to_dict_is_json_ready(self):
        data = ExperimentConfig(kind='ladder').to_dict()
        assert data['rungs'] == [4, 14]
        assert data['generator'] == {'name': 'typical'}
        assert json.loads(json.dumps(data)) == data


class TestLoadConfig:
    def test_reads_document(self, tmp_path, config_dir):
        path = _write(tmp_path / 'c.json', {'kind': 'solve', 'n_steps': 10, 'radii': [1, 2]})
        config = load_config(path)
        assert config.kind == 'solve'
        assert config.n_steps == 10
        assert config.radii == (1, 2)

    def test_missing_kind(self, tmp_path, config_dir):
        path = _write(tmp_path / 'c.json', {'n_steps': 10})
        with pytest.raises(ValueError, match="kind"):
            load_config(path)

    def test_unknown_field(self, tmp_path, config_dir):
        path = _write(tmp_path / 'c.json', {'kind': 'solve', 'n_paths': 10})
        with pytest.raises(ValueError, match="n_paths"):
            load_config(path)

    def test_unreadable_file(self, tmp_path, config_dir):
        with pytest.raises(ValueError, match="Cannot read configuration"):
            load_config(str(tmp_path / 'missing.json'))
        bad = tmp_path / 'bad.json'
        bad.write_text('{not json', encoding='utf-8')
        with pytest.raises(ValueError, match="Cannot read configuration"):
            load_config(str(bad))

    def test_document_must_be_object(self, tmp_path, config_dir):
        path = _write(tmp_path / 'c.json', [1, 2])
        with pytest.raises(ValueError, match="JSON object"):
            load_config(path)

    def test_precedence(self, tmp_path, config_dir, capsys):
        ConfigManager().save_profile('fast', {'n_steps': 5, 'seed': 3, 'kind': 'bound'})
        path = _write(tmp_path / 'c.json', {'kind': 'solve', 'seed': 11})
        config = load_config(path, kind='ladder', profile='fast')
        assert config.n_steps == 5
        assert config.seed == 11
        assert config.kind == 'ladder'
        assert 'WARNING' in capsys.readouterr().out

    def test_missing_profile(self, config_dir):
        with pytest.raises(ValueError, match="not found"):
            load_config(None, kind='solve', profile='nope')

    def test_kind_only(self, config_dir):
        assert load_config(None, kind='bound') == ExperimentConfig(kind='bound')


class TestOverrides:
    def test_flags_replace_fields(self):
        config = apply_overrides(ExperimentConfig(kind='solve'), seed=5, out_dir='/tmp/x', fmt='csv')
        assert (config.seed, config.out_dir, config.format) == (5, '/tmp/x', 'csv')

    def test_no_flags_is_identity(self):
        config = ExperimentConfig(kind='solve')
        assert apply_overrides(config) is config

    def test_from_dict_over_base(self):
        base = ExperimentConfig(kind='solve', seed=4)
        assert from_dict({'n_steps': 7}, base=base) == ExperimentConfig(kind='solve', seed=4, n_steps=7)


class TestConfigManager:
    def test_save_and_load(self, tmp_path):
        mgr = ConfigManager(tmp_path)
        mgr.save_profile('p', {'n_steps': 20, 'levels': [1.0, 2.0], 'basis': 'indicator'})
        assert mgr.load_profile('p') == {'n_steps': 20, 'levels': [1.0, 2.0], 'basis': 'indicator'}
        assert mgr.list_profiles() == ['p']
        assert oct(mgr.config_file.stat().st_mode & 0o777) == oct(0o600)

    def test_rejects_unknown_fields(self, tmp_path):
        with pytest.raises(ValueError, match="Unknown configuration field"):
            ConfigManager(tmp_path).save_profile('p', {'paths': 3})

    def test_missing_profile(self, tmp_path):
        assert ConfigManager(tmp_path).load_profile('none') is None

    def test_default_profile(self, tmp_path):
        mgr = ConfigManager(tmp_path)
        assert mgr.get_default_profile() == 'default'
        mgr.save_profile('a', {'seed': 1})
        mgr.set_default_profile('a')
        assert mgr.get_default_profile() == 'a'
        assert mgr.load_profile('a') == {'seed': 1}

    def test_delete_clears_default(self, tmp_path):
        mgr = ConfigManager(tmp_path)
        mgr.save_profile('a', {'seed': 1})
        mgr.set_default_profile('a')
        assert mgr.delete_profile('a')
        assert not mgr.delete_profile('a')
        assert mgr.list_profiles() == []
        assert mgr.get_default_profile() == 'default'


class TestInteractiveSetup:
    def test_saves_first_profile_as_default(self, tmp_path, capsys):
        answers = ['2', '', '20', '5000', '7', '', '', '']
        with patch.object(config_module, 'HAS_INQUIRER', False), \
                patch('builtins.input', side_effect=answers):
            assert interactive_setup('lab', config_dir=tmp_path)
        mgr = ConfigManager(tmp_path)
        assert mgr.load_profile('lab') == {'method': 'lattice', 'basis': 'polynomial', 'n_steps': 20,
                                           'n_samples': 5000, 'seed': 7, 'degree': 4, 'max_workers': 1}
        assert mgr.get_default_profile() == 'lab'
        assert "✓ Profile 'lab' saved" in capsys.readouterr().out

    def test_invalid_number(self, tmp_path, capsys):
        with patch.object(config_module, 'HAS_INQUIRER', False), \
                patch('builtins.input', side_effect=['1', '1', 'many']):
            assert not interactive_setup('lab', config_dir=tmp_path)
        assert ConfigManager(tmp_path).list_profiles() == []
        assert 'not a valid value' in capsys.readouterr().out

    def test_invalid_parameters_not_saved(self, tmp_path, capsys):
        with patch.object(config_module, 'HAS_INQUIRER', False), \
                patch('builtins.input', side_effect=['1', '1', '0', '', '', '', '']):
            assert not interactive_setup('lab', config_dir=tmp_path)
        assert 'n_steps' in capsys.readouterr().out

    def test_keeps_existing_profile(self, tmp_path):
        ConfigManager(tmp_path).save_profile('lab', {'seed': 1})
        with patch.object(config_module, 'HAS_INQUIRER', False), \
                patch('builtins.input', side_effect=['n']):
            assert not interactive_setup('lab', config_dir=tmp_path)
        assert ConfigManager(tmp_path).load_profile('lab') == {'seed': 1}


class TestListProfiles:
    def test_empty(self, tmp_path, capsys):
        assert list_profiles(config_dir=tmp_path) == []
        assert 'No profiles configured' in capsys.readouterr().out

    def test_table(self, tmp_path, capsys):
        mgr = ConfigManager(tmp_path)
        mgr.save_profile('a', {'seed': 1})
        mgr.save_profile('b', {'seed': 2, 'n_steps': 10})
        mgr.set_default_profile('b')
        assert list_profiles(config_dir=tmp_path) == ['a', 'b']
        out = capsys.readouterr().out
        assert 'n_steps=10, seed=2' in out
        assert 'Profile' in out
