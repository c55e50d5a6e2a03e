"""
Configuration management for the bsdelab library

Experiment configurations are single JSON documents. Named profiles in
~/.bsdelab/config.ini hold default parameter sets (grid sizes, seeds, basis
choices) that a JSON document and command-line flags override.
"""

import configparser
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .integrability import (abs_brownian, brownian_terminal, clamped_brownian, constant_terminal,
                            counterexample_terminal, exp_abs_brownian, exp_brownian,
                            running_max_terminal)
from .dual_bound import constant_generator, sublinear_generator, typical_generator
from .lsmc_solver import INDICATOR, POLYNOMIAL, RegressionBasis

try:
    import inquirer
    HAS_INQUIRER = True
    if os.environ.get('BSDELAB_DEBUG'):
        print(f"DEBUG: Successfully imported inquirer, HAS_INQUIRER = {HAS_INQUIRER}")
except ImportError as e:
    HAS_INQUIRER = False
    if os.environ.get('BSDELAB_DEBUG'):
        print(f"DEBUG: Failed to import inquirer: {e}, HAS_INQUIRER = {HAS_INQUIRER}")

CONFIG_DIR = Path.home() / '.bsdelab'

KINDS = ('young-sweep', 'phi-moment', 'integrability', 'solve', 'ladder', 'counterexample', 'bound')
METHODS = ('lsmc', 'lattice')
FORMATS = ('csv', 'json', 'both')

# Kinds whose target operation needs λγ²T < 1
SUFFICIENCY_KINDS = ('phi-moment', 'bound')

# Kinds that solve the BSDE, and so use the generator and the regression basis
SOLVER_KINDS = ('solve', 'ladder', 'bound')

# Least-squares fits need this many samples per basis function
SAMPLES_PER_BASIS_FUNCTION = 10


def _build_terminal(name, params, mu):
    factories = {
        'zero': lambda: constant_terminal(0.0),
        'constant': lambda: constant_terminal(params.get('c', 1.0)),
        'brownian': brownian_terminal,
        'clamp': lambda: clamped_brownian(params.get('lower', -2.0), params.get('upper', 2.0)),
        'abs': abs_brownian,
        'exp': lambda: exp_brownian(params.get('a', 1.0)),
        'exp_abs': lambda: exp_abs_brownian(params.get('a', 0.5)),
        'counterexample': lambda: counterexample_terminal(params.get('mu', mu)),
        'running_max': running_max_terminal,
    }
    if name not in factories:
        raise ValueError(f"Unknown terminal value '{name}'; choose from {', '.join(factories)}")
    return factories[name]()


def _build_generator(name, params, alpha, beta, gamma):
    if name == 'sublinear' and (isinstance(alpha, dict) or callable(alpha)):
        raise ValueError("generator 'sublinear' needs a constant alpha")
    factories = {
        'typical': lambda: typical_generator(alpha=alpha, beta=beta, gamma=gamma),
        'sublinear': lambda: sublinear_generator(params.get('q', 0.5), gamma=gamma, alpha=alpha, beta=beta),
        'constant': lambda: constant_generator(params.get('c', 1.0), gamma=gamma),
    }
    if name not in factories:
        raise ValueError(f"Unknown generator '{name}'; choose from {', '.join(factories)}")
    return factories[name]()


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run needs, validated before any computation."""

    kind: str
    # model
    horizon: float = 1.0
    dimension: int = 1
    beta: float = 0.0
    gamma: float = 0.5
    alpha: object = 0.0
    lam: float = 2.0
    mu: float = 0.6
    terminal: dict = field(default_factory=lambda: {'name': 'clamp', 'lower': -2.0, 'upper': 2.0})
    generator: dict = field(default_factory=lambda: {'name': 'typical'})
    # numerics
    n_steps: int = 50
    n_samples: int = 100_000
    seed: int = 0
    degree: int = 4
    basis: str = POLYNOMIAL
    bins: int = 16
    radii: tuple = (10.0, 20.0, 30.0, 40.0)
    tolerance: float = 1e-8
    k_max: int = 50
    rungs: tuple = (4, 14)
    levels: tuple = (10.0, 100.0)
    n_controls: int = 20
    n_triples: int = 100_000
    method: str = 'lsmc'
    chunk_size: int = 16384
    max_workers: int = 1
    # output
    out_dir: str = None
    format: str = 'both'

    def build_terminal(self):
        """The TerminalValue named by ``terminal``."""
        spec = dict(self.terminal)
        name = spec.pop('name', None)
        return _build_terminal(name, spec, self.mu)

    def build_generator(self):
        """The GeneratorSpec named by ``generator``, certified by (alpha, beta, gamma)."""
        spec = dict(self.generator)
        name = spec.pop('name', None)
        return _build_generator(name, spec, self.alpha, self.beta, self.gamma)

    def to_dict(self):
        data = asdict(self)
        data['radii'] = list(self.radii)
        data['rungs'] = list(self.rungs)
        data['levels'] = list(self.levels)
        return data


FIELD_NAMES = tuple(f.name for f in fields(ExperimentConfig))


def _is_count(value, minimum=1):
    return isinstance(value, int) and not isinstance(value, bool) and value >= minimum


def validate(config):
    """
    Check a configuration against the preconditions of its experiment.

    Raises:
        ValueError: Naming the first offending field
    """
    if config.kind not in KINDS:
        raise ValueError(f"Unknown experiment kind '{config.kind}'; choose from {', '.join(KINDS)}")
    if not config.horizon > 0:
        raise ValueError(f"horizon must be positive, got {config.horizon}")
    for name in ('dimension', 'n_steps', 'n_samples', 'degree', 'bins', 'k_max', 'n_triples',
                 'chunk_size', 'max_workers'):
        if not _is_count(getattr(config, name)):
            raise ValueError(f"{name} must be a positive integer, got {getattr(config, name)!r}")
    if not _is_count(config.n_controls, 0):
        raise ValueError(f"n_controls must be a nonnegative integer, got {config.n_controls!r}")
    if not _is_count(config.seed, 0) or config.seed >= 2 ** 64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {config.seed!r}")
    if not config.gamma > 0:
        raise ValueError(f"gamma must be positive, got {config.gamma}")
    if config.beta < 0:
        raise ValueError(f"beta must be nonnegative, got {config.beta}")
    if config.beta * config.horizon / config.n_steps >= 1:
        raise ValueError(f"beta * step = {config.beta * config.horizon / config.n_steps:g} must be below 1")
    if not config.lam > 0:
        raise ValueError(f"lam must be positive, got {config.lam}")
    if not 0 < config.mu < 1:
        raise ValueError(f"mu must lie in (0, 1), got {config.mu}")
    if config.basis not in (POLYNOMIAL, INDICATOR):
        raise ValueError(f"basis must be '{POLYNOMIAL}' or '{INDICATOR}', got {config.basis!r}")
    radii = list(config.radii)
    if len(radii) < 2 or any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError(f"radii must be at least two positive increasing values, got {radii}")
    if not config.tolerance > 0:
        raise ValueError(f"tolerance must be positive, got {config.tolerance}")
    if len(config.rungs) != 2 or not all(isinstance(j, int) for j in config.rungs) \
            or config.rungs[1] - config.rungs[0] < 2:
        raise ValueError(f"rungs must be [j_start, j_stop] with at least three rungs, got {list(config.rungs)}")
    if not config.levels or any(not k > 0 for k in config.levels):
        raise ValueError(f"levels must be positive, got {list(config.levels)}")
    if config.method not in METHODS:
        raise ValueError(f"method must be one of {', '.join(METHODS)}, got {config.method!r}")
    if config.format not in FORMATS:
        raise ValueError(f"format must be one of {', '.join(FORMATS)}, got {config.format!r}")
    if not isinstance(config.terminal, dict) or 'name' not in config.terminal:
        raise ValueError("terminal must be an object with a 'name' field")
    if not isinstance(config.generator, dict) or 'name' not in config.generator:
        raise ValueError("generator must be an object with a 'name' field")
    gen = config.build_generator()
    if config.kind in SOLVER_KINDS and not gen.typical:
        gen.check_certificate(config.horizon, config.dimension, seed=config.seed)

    xi = config.build_terminal()
    if xi.dimension != config.dimension:
        raise ValueError(f"terminal '{xi.description}' is {xi.dimension}-dimensional, "
                         f"dimension is {config.dimension}")
    if config.kind in SOLVER_KINDS and config.method == 'lattice' \
            and not (xi.markovian and config.dimension == 1):
        raise ValueError("method 'lattice' needs a Markovian terminal value in dimension 1")
    # bound always regresses: dual values at later nodes, Ȳ for path-dependent ξ
    if (config.kind in ('solve', 'ladder') and config.method == 'lsmc') or config.kind == 'bound':
        size = RegressionBasis(config.basis, degree=config.degree, bins=config.bins).size(config.dimension)
        if config.n_samples < SAMPLES_PER_BASIS_FUNCTION * size:
            raise ValueError(f"n_samples = {config.n_samples} is too few for a {config.basis} basis "
                             f"of size {size}; need at least {SAMPLES_PER_BASIS_FUNCTION * size}")

    if config.kind in SUFFICIENCY_KINDS:
        product = config.lam * config.gamma ** 2 * config.horizon
        if product >= 1:
            raise ValueError(f"lam*gamma^2*horizon = {product:g} must be below 1 for '{config.kind}'")
    return config


def from_dict(data, base=None):
    """
    Build a configuration from a mapping over ``base`` (defaults when None).

    Raises:
        ValueError: On unknown fields or a missing kind
    """
    unknown = sorted(set(data) - set(FIELD_NAMES))
    if unknown:
        raise ValueError(f"Unknown configuration field(s): {', '.join(unknown)}")
    values = dict(data)
    for name in ('radii', 'rungs', 'levels'):
        if name in values:
            values[name] = tuple(values[name])
    if base is None:
        if 'kind' not in values:
            raise ValueError("configuration needs a 'kind'")
        return ExperimentConfig(**values)
    return replace(base, **values)


def load_config(path, kind=None, profile=None, verbose=False):
    """
    Read a JSON configuration document.

    Profile values sit below the document, which sits below ``kind`` when
    that is given (the CLI subcommand).

    Raises:
        ValueError: If the file cannot be read or holds invalid JSON or fields
    """
    data = {}
    if path is not None:
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ValueError(f"Cannot read configuration {path}: {e}") from e
        if not isinstance(data, dict):
            raise ValueError(f"Configuration {path} must hold a JSON object")
        if verbose:
            print(f"Loaded configuration from {path}")

    merged = {}
    if profile:
        params = ConfigManager().load_profile(profile)
        if params is None:
            raise ValueError(f"Profile '{profile}' not found")
        params.pop('kind', None)
        merged.update(params)
        if verbose:
            print(f"Using profile '{profile}'")
    merged.update(data)
    if kind is not None:
        if 'kind' in data and data['kind'] != kind:
            print(f"WARNING: configuration kind '{data['kind']}' replaced by '{kind}'")
        merged['kind'] = kind
    return from_dict(merged)


def apply_overrides(config, seed=None, out_dir=None, fmt=None):
    """Command-line flags over a loaded configuration."""
    changes = {}
    if seed is not None:
        changes['seed'] = seed
    if out_dir is not None:
        changes['out_dir'] = out_dir
    if fmt is not None:
        changes['format'] = fmt
    return replace(config, **changes) if changes else config


class ConfigManager:
    """Manages named parameter profiles"""

    def __init__(self, config_dir=None):
        self.config_dir = Path(config_dir) if config_dir else CONFIG_DIR
        self.config_file = self.config_dir / 'config.ini'
        self.ensure_config_dir()

    def ensure_config_dir(self):
        """Create ~/.bsdelab (owner-only) on first use"""
        self.config_dir.mkdir(mode=0o700, parents=True, exist_ok=True)

    def _read(self):
        config = configparser.ConfigParser()
        if self.config_file.exists():
            config.read(self.config_file)
        return config

    def _write(self, config):
        with open(self.config_file, 'w') as f:
            config.write(f)
        self.config_file.chmod(0o600)

    def save_profile(self, profile_name, params):
        """
        Save a parameter set under a profile name.

        Raises:
            ValueError: On fields an ExperimentConfig does not have
        """
        unknown = sorted(set(params) - set(FIELD_NAMES))
        if unknown:
            raise ValueError(f"Unknown configuration field(s): {', '.join(unknown)}")
        config = self._read()
        config[profile_name] = {key: json.dumps(value) for key, value in params.items()}
        self._write(config)

    def load_profile(self, profile_name='default'):
        """Load the parameters of a profile, or None if it does not exist"""
        config = self._read()
        if profile_name not in config.sections():
            return None
        return {key: json.loads(value) for key, value in config[profile_name].items()
                if key != 'default_profile'}

    def list_profiles(self):
        """Names of the saved parameter profiles"""
        return self._read().sections()

    def delete_profile(self, profile_name):
        """Delete a profile; returns whether it existed"""
        config = self._read()
        if profile_name not in config.sections():
            return False
        config.remove_section(profile_name)
        if config['DEFAULT'].get('default_profile') == profile_name:
            del config['DEFAULT']['default_profile']
        self._write(config)
        return True

    def set_default_profile(self, profile_name):
        """Make a profile the one experiments start from"""
        config = self._read()
        config['DEFAULT']['default_profile'] = profile_name
        self._write(config)

    def get_default_profile(self):
        """Name of the default profile, 'default' when none was chosen"""
        return self._read()['DEFAULT'].get('default_profile', 'default')


def _confirm(message, default, debug=False):
    suffix = '(Y/n)' if default else '(y/N)'
    if HAS_INQUIRER:
        try:
            answers = inquirer.prompt([inquirer.Confirm('answer', message=message, default=default)])
            return answers['answer']
        except Exception as e:
            if debug:
                print(f"DEBUG: Inquirer failed for confirm prompt: {e}")
    answer = input(f"{message} {suffix}: ").strip().lower()
    if not answer:
        return default
    return answer in ('y', 'yes')


def _choose(message, choices, debug=False):
    if HAS_INQUIRER:
        try:
            answers = inquirer.prompt([inquirer.List('choice', message=message, choices=list(choices))])
            return answers['choice']
        except Exception as e:
            if debug:
                print(f"DEBUG: Inquirer failed for choice prompt: {e}")
    print(f"{message}:")
    for k, choice in enumerate(choices, 1):
        print(f"{k}. {choice}")
    picked = input(f"\nEnter choice (1-{len(choices)}): ").strip()
    if picked.isdigit() and 1 <= int(picked) <= len(choices):
        return choices[int(picked) - 1]
    return choices[0]


def interactive_setup(profile_name=None, debug=False, config_dir=None):
    """Interactive wizard for a parameter profile"""
    print("=" * 60)
    print("bsdelab Profile Setup")
    print("=" * 60)
    print()

    if debug:
        print(f"DEBUG: HAS_INQUIRER = {HAS_INQUIRER}")

    config_mgr = ConfigManager(config_dir)
    if not profile_name:
        profile_name = input("Enter profile name (default): ").strip() or 'default'

    if config_mgr.load_profile(profile_name) is not None:
        if not _confirm(f"Profile '{profile_name}' already exists. Overwrite?", False, debug):
            print("Setup cancelled.")
            return False

    params = {}
    params['method'] = _choose("Select the ladder solver", list(METHODS), debug)
    params['basis'] = _choose("Select the regression basis", [POLYNOMIAL, INDICATOR], debug)

    numeric = [
        ('n_steps', 'Time steps N', int, 50),
        ('n_samples', 'Sample paths M', int, 100_000),
        ('seed', 'Seed', int, 0),
        ('degree', 'Polynomial degree', int, 4),
        ('max_workers', 'Worker threads', int, 1),
    ]
    print("\nNumerical parameters (Enter keeps the default)")
    for key, label, cast, default in numeric:
        raw = input(f"{label} (default: {default}): ").strip()
        try:
            params[key] = cast(raw) if raw else default
        except ValueError:
            print(f"✗ '{raw}' is not a valid value for {label}.")
            print("\nProfile not saved.")
            return False

    try:
        validate(from_dict(dict(params, kind='solve')))
    except ValueError as e:
        print(f"✗ {e}")
        print("\nProfile not saved.")
        return False

    if not _confirm("Save this profile?", True, debug):
        print("\nProfile not saved.")
        return False

    config_mgr.save_profile(profile_name, params)
    print(f"\n✓ Profile '{profile_name}' saved")
    print(f"  Config file: {config_mgr.config_file}")

    if len(config_mgr.list_profiles()) == 1:
        config_mgr.set_default_profile(profile_name)
        print(f"\n✓ '{profile_name}' set as default profile (first profile)")
    elif _confirm(f"Set '{profile_name}' as the default profile?", True, debug):
        config_mgr.set_default_profile(profile_name)
        print(f"✓ '{profile_name}' set as default profile")
    return True


def list_profiles(verbose=True, config_dir=None):
    """List available profiles with their parameters"""
    config_mgr = ConfigManager(config_dir)
    profiles = config_mgr.list_profiles()

    if verbose:
        if not profiles:
            print("No profiles configured.")
            return []

        from prettytable import PrettyTable

        table = PrettyTable()
        table.field_names = ["Profile", "Parameters", "Default"]
        table.align["Profile"] = "l"
        table.align["Parameters"] = "l"
        table.align["Default"] = "c"

        default_profile = config_mgr.get_default_profile()
        for profile in profiles:
            params = config_mgr.load_profile(profile) or {}
            summary = ', '.join(f"{k}={v}" for k, v in sorted(params.items()))
            if len(summary) > 60:
                summary = summary[:57] + "..."
            table.add_row([profile, summary, "✓" if profile == default_profile else ""])
        print(table)

    return profiles
