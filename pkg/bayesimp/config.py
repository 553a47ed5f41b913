"""INI run configuration for the command-line tools.

A configuration looks like::

    [data]
    generator = simple
    n = 100
    m = 50
    mixture = 0.5
    seed = 1

    [model]
    adjustment = backdoor
    adjustment_columns = z

Only ``[data]`` is required; every other section and key has a default.
Unknown sections and keys are rejected, and errors name the line of the
offending key.
"""
import configparser
import re

from .core import ConfigError

__all__ = ('RunConfig', 'SCHEMA', 'METHODS', 'BO_METHODS')

METHODS = ('IMP', 'BayesIME', 'BayesIMP', 'Sampling')
BO_METHODS = METHODS + ('PlainGP',)


class _Field:
    def __init__(self, default):
        self.default = default

    def parse(self, text):
        raise NotImplementedError

    def render(self, value):
        return str(value)


class _Int(_Field):
    def __init__(self, default, low=None):
        super().__init__(default)
        self.low = low

    def parse(self, text):
        try:
            value = int(text)
        except ValueError:
            raise ValueError("expected an integer, got %r" % text)
        if self.low is not None and value < self.low:
            raise ValueError("must be >= %d, got %d" % (self.low, value))
        return value


class _Float(_Field):
    """A float, optionally bounded, or one of a few keywords."""
    def __init__(self, default, low=None, high=None, positive=False, words=(),
                 message=None):
        super().__init__(default)
        self.low = low
        self.high = high
        self.positive = positive
        self.words = words
        self.message = message

    def parse(self, text):
        if text in self.words:
            return text
        try:
            value = float(text)
        except ValueError:
            expected = ' or '.join(("a number",) + tuple(repr(w) for w in self.words))
            raise ValueError("expected %s, got %r" % (expected, text))
        out_of_range = ((self.positive and not value > 0)
                        or (self.low is not None and value < self.low)
                        or (self.high is not None and value > self.high)
                        or value != value)
        if out_of_range:
            if self.message:
                raise ValueError("%s, got %r" % (self.message, text))
            raise ValueError("%r is out of range" % text)
        return value

    def render(self, value):
        return value if isinstance(value, str) else repr(float(value))


class _Choice(_Field):
    def __init__(self, default, choices):
        super().__init__(default)
        self.choices = choices

    def parse(self, text):
        if text not in self.choices:
            raise ValueError("expected one of %s, got %r" % (', '.join(self.choices), text))
        return text


class _Str(_Field):
    def parse(self, text):
        return text


class _Bool(_Field):
    def parse(self, text):
        lowered = text.lower()
        if lowered in configparser.ConfigParser.BOOLEAN_STATES:
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        raise ValueError("expected a boolean, got %r" % text)

    def render(self, value):
        return 'true' if value else 'false'


class _List(_Field):
    """A comma separated list whose items are parsed by ``item``."""
    def __init__(self, default, item):
        super().__init__(default)
        self.item = item

    def parse(self, text):
        parts = [p.strip() for p in text.split(',') if p.strip()]
        return tuple(self.item.parse(p) for p in parts)

    def render(self, value):
        return ', '.join(self.item.render(v) for v in value)


_probability = _Float(None, positive=True, high=1.0 - 1e-12,
                      message="mass must lie in (0, 1)")

SCHEMA = {
    'data': {
        'generator': _Choice(None, ('ablation', 'simple', 'hard', 'healthcare')),
        'n': _Int(100, low=1),
        'm': _Int(100, low=1),
        'mixture': _Float(0.0, low=0.0, high=1.0, message="π out of range [0,1]"),
        'noise': _Float('auto', low=0.0, words=('auto',)),
        'seed': _Int(0, low=0),
        'treatment': _Str(''),
    },
    'kernel': {
        'lengthscale': _Float('median', positive=True, words=('median',)),
        'eta': _Float('auto', positive=True, words=('auto',)),
        'signal_variance': _Float(1.0, positive=True),
    },
    'model': {
        'adjustment': _Choice('auto', ('auto', 'none', 'backdoor', 'frontdoor')),
        'adjustment_columns': _List((), _Str(None)),
        'ridge': _Float(0.1, positive=True),
        'noise': _Float('auto', positive=True, words=('auto',)),
        'inner_ridge': _Float('auto', positive=True, words=('auto',)),
        'r_ridge': _Float('auto', low=0.0, words=('auto',)),
        'landmark_cap': _Int(300, low=1),
        'frozen': _List(('eta',), _Choice(None, ('treatment_lengthscale',
                                                  'adjustment_lengthscale', 'ridge',
                                                  'eta'))),
        'optimize': _Bool(False),
    },
    'ablation': {
        'grid_low': _Float(-7.0),
        'grid_high': _Float(7.0),
        'grid_size': _Int(141, low=2),
        'seeds': _Int(1, low=1),
        'methods': _List(METHODS, _Choice(None, METHODS)),
    },
    'bo': {
        'grid_low': _Float(-5.0),
        'grid_high': _Float(5.0),
        'grid_size': _Int(200, low=1),
        'budget': _Int(30, low=0),
        'seeds': _Int(10, low=1),
        'samples_l': _Int(100, low=1),
        'samples_r': _Int(100, low=1),
        'noise': _Float('pilot', positive=True, words=('pilot',)),
        'oracle_samples': _Int(10, low=1),
        'mc_samples': _Int(10000, low=10000),
        'methods': _List(('BayesIMP', 'Sampling', 'PlainGP'), _Choice(None, BO_METHODS)),
        'direction': _Choice('max', ('max', 'min')),
    },
    'calibrate': {
        'mass_grid': _List((0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9), _probability),
        'test_points': _List((-4.0, -2.0, 0.0, 2.0, 4.0), _Float(None)),
        'seeds': _Int(10, low=1),
        'mc_samples': _Int(10000, low=10000),
        'methods': _List(METHODS, _Choice(None, METHODS)),
    },
    'out': {
        'directory': _Str('results'),
    },
}

REQUIRED = {'data': ('generator',)}

_section_re = re.compile(r'^\s*\[([^\]]+)\]')
_key_re = re.compile(r'^([^\s#;=:][^=:]*?)\s*[=:]')


def _line_numbers(text):
    """Map ``section`` and ``(section, key)`` to their 1-based line numbers."""
    lines = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        m = _section_re.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault(section, lineno)
            continue
        m = _key_re.match(line)
        if m and section is not None:
            lines.setdefault((section, m.group(1).strip().lower()), lineno)
    return lines


class _Section:
    """Attribute access to the values of one section."""
    __slots__ = ('_name', '_values')

    def __init__(self, name, values):
        self._name = name
        self._values = values

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError("[%s] has no key %r" % (self._name, key))

    def __getitem__(self, key):
        return self._values[key]

    def __repr__(self):
        return "[%s] %s" % (self._name, self._values)


class RunConfig:
    """A validated run configuration.

    Parameters
    ----------
    values : dict
        ``{section: {key: value}}`` with parsed values. Missing keys take
        their defaults.

    Examples
    --------
    >>> config = RunConfig.parse("[data]\\ngenerator = ablation\\nn = 3\\n")
    >>> config.data.n, config.bo.budget
    (3, 30)
    """
    def __init__(self, values):
        self.values = {}
        for section, fields in SCHEMA.items():
            given = values.get(section, {})
            self.values[section] = {key: given.get(key, field.default)
                                    for key, field in fields.items()}

    def __repr__(self):
        return "RunConfig<%s, seed=%d>" % (self.data.generator, self.data.seed)

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.values == other.values

    def __getattr__(self, section):
        if section in SCHEMA:
            return _Section(section, self.values[section])
        raise AttributeError(section)

    @classmethod
    def parse(cls, text, source='<config>'):
        """Parse INI text.

        Raises
        ------
        ConfigError
            On syntax errors, unknown sections or keys, invalid values and
            missing required entries.
        """
        parser = configparser.ConfigParser(interpolation=None, comment_prefixes=('#',),
                                           inline_comment_prefixes=('#',),
                                           default_section='\0')
        try:
            parser.read_string(text, source=source)
        except configparser.Error as e:
            raise ConfigError("%s: %s" % (source, e))
        lines = _line_numbers(text)

        def where(*key):
            lineno = lines.get(key if len(key) > 1 else key[0])
            return "%s line %d" % (source, lineno) if lineno else source

        values = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError("%s: unknown section [%s]" % (where(section), section))
            fields = SCHEMA[section]
            values[section] = {}
            for key, text_value in parser.items(section):
                if key not in fields:
                    raise ConfigError("%s: unknown key %r in [%s]"
                                      % (where(section, key), key, section))
                try:
                    values[section][key] = fields[key].parse(text_value.strip())
                except ValueError as e:
                    raise ConfigError("%s: [%s] %s: %s"
                                      % (where(section, key), section, key, e))
        for section, keys in REQUIRED.items():
            if section not in values:
                raise ConfigError("%s: missing required section [%s]" % (source, section))
            for key in keys:
                if key not in values[section]:
                    raise ConfigError("%s: missing required key %r in [%s]"
                                      % (where(section), key, section))
        return cls(values)

    @classmethod
    def from_file(cls, path):
        """Read and parse a configuration file (UTF-8)."""
        with open(path, encoding='utf-8') as f:
            text = f.read()
        return cls.parse(text, source=path)

    def render(self):
        """INI text that parses back to an equal configuration."""
        out = []
        for section, fields in SCHEMA.items():
            out.append("[%s]" % section)
            for key, field in fields.items():
                out.append("%s = %s" % (key, field.render(self.values[section][key])))
            out.append("")
        return "\n".join(out)

    def replace(self, section, **kwargs):
        """A copy with some keys of ``section`` changed."""
        values = {s: dict(v) for s, v in self.values.items()}
        values[section].update(kwargs)
        return RunConfig(values)
