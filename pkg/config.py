"""
Pipeline configuration: dimensions, training hyperparameters and component switches.

A config file is a single JSON object with an explicit key for every field. Unknown keys are errors, so typos in an
experiment config fail loudly instead of silently falling back to a default.
"""

import json
import os
from typing import NamedTuple

SEED_ENV = 'VAQUITA_SEED'

COMPONENTS = ['tokenizer', 'perceiver', 'vqformer', 'decoder']
TEST_SAMPLING = ['uniform', 'aligned']


class ConfigException(Exception):
    pass


class DatasetException(Exception):
    pass


class PerceiverConfig(NamedTuple):
    T: int
    n: int
    d: int
    m: int
    p: int
    H: int
    d_h: int


class VQFormerConfig(NamedTuple):
    d: int
    d_text: int
    H: int
    d_h: int
    s_q: float


class EncoderConfig(NamedTuple):
    raw_dim: int
    sampler_dim: int


# Full-size dimensions
FULL_PERCEIVER = PerceiverConfig(T=100, n=256, d=1024, m=356, p=1, H=8, d_h=64)
FULL_VQFORMER = VQFormerConfig(d=1024, d_text=4096, H=8, d_h=64, s_q=8.0)


class PipelineConfig(NamedTuple):
    perceiver: PerceiverConfig
    vqformer: VQFormerConfig
    encoder: EncoderConfig
    vocab_size: int
    max_text_len: int
    max_answer_len: int
    label_smoothing: float
    learning_rate: float
    batch_size: int
    epochs: int
    seed: int
    trainable: dict[str, bool]
    init_std: float
    embedding_init_std: float
    decoder_init_std: float
    ln_eps: float
    data_alignment: bool
    feature_alignment: bool
    test_sampling: str
    prompt: str
    vocab: list[str]

    def to_json(self) -> dict:
        d = self._asdict()
        d['perceiver'] = self.perceiver._asdict()
        d['vqformer'] = self.vqformer._asdict()
        d['encoder'] = self.encoder._asdict()
        d['trainable'] = dict(self.trainable)
        d['vocab'] = list(self.vocab)
        return d


DEFAULT_TRAINABLE = {'tokenizer': True, 'perceiver': True, 'vqformer': True, 'decoder': False}


def make_config(perceiver: PerceiverConfig, d_text: int, s_q: float | None = None, **overrides) -> PipelineConfig:
    """Build a config around the given dimensions; the VQ-Former shares H and d_h with the perceiver."""
    if s_q is None:
        s_q = float(perceiver.d_h) ** 0.5
    fields = dict(
        perceiver=perceiver,
        vqformer=VQFormerConfig(d=perceiver.d, d_text=d_text, H=perceiver.H, d_h=perceiver.d_h, s_q=s_q),
        encoder=EncoderConfig(raw_dim=8, sampler_dim=768),
        vocab_size=64,
        max_text_len=64,
        max_answer_len=4,
        label_smoothing=0.1,
        learning_rate=2e-5,
        batch_size=32,
        epochs=3,
        seed=0,
        trainable=dict(DEFAULT_TRAINABLE),
        init_std=0.02,
        embedding_init_std=1.0,
        decoder_init_std=1.0,
        ln_eps=1e-5,
        data_alignment=True,
        feature_alignment=True,
        test_sampling='uniform',
        prompt='Please be critical',
        vocab=[],
    )
    fields.update(overrides)
    config = PipelineConfig(**fields)
    validate(config)
    return config


def full_config() -> PipelineConfig:
    return make_config(FULL_PERCEIVER, FULL_VQFORMER.d_text, FULL_VQFORMER.s_q,
                       encoder=EncoderConfig(raw_dim=1024, sampler_dim=768), vocab_size=32000)


def desk_config() -> PipelineConfig:
    return make_config(PerceiverConfig(T=4, n=4, d=8, m=4, p=1, H=2, d_h=4), d_text=16,
                       encoder=EncoderConfig(raw_dim=8, sampler_dim=768),
                       learning_rate=0.05, batch_size=4, epochs=3)


def gradcheck_config() -> PipelineConfig:
    return make_config(PerceiverConfig(T=2, n=2, d=3, m=2, p=1, H=1, d_h=2), d_text=4,
                       encoder=EncoderConfig(raw_dim=3, sampler_dim=4), vocab_size=5, init_std=0.5,
                       embedding_init_std=0.5, decoder_init_std=0.5, max_answer_len=2)


def overfit_config() -> PipelineConfig:
    return make_config(PerceiverConfig(T=2, n=2, d=4, m=2, p=1, H=1, d_h=4), d_text=16,
                       encoder=EncoderConfig(raw_dim=6, sampler_dim=16), vocab_size=32,
                       label_smoothing=0.0, learning_rate=0.5, batch_size=8, epochs=300)


PRESETS = {
    'desk': desk_config,
    'gradcheck': gradcheck_config,
    'overfit': overfit_config,
    'full': full_config,
}


def validate(config: PipelineConfig):
    pc = config.perceiver
    vc = config.vqformer
    for name, value in list(pc._asdict().items()) + [('d_text', vc.d_text), ('vqformer.H', vc.H),
                                                     ('vqformer.d_h', vc.d_h), ('raw_dim', config.encoder.raw_dim),
                                                     ('sampler_dim', config.encoder.sampler_dim),
                                                     ('vocab_size', config.vocab_size),
                                                     ('max_text_len', config.max_text_len),
                                                     ('max_answer_len', config.max_answer_len),
                                                     ('batch_size', config.batch_size)]:
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise ConfigException(f'{name} must be a positive integer, got {value!r}')
    if vc.d != pc.d:
        raise ConfigException(f'vqformer.d ({vc.d}) must equal perceiver.d ({pc.d})')
    if vc.s_q <= 0:
        raise ConfigException(f's_q must be positive, got {vc.s_q}')
    if config.vocab_size < 3:
        raise ConfigException('vocab_size must leave room for <pad>, <unk> and at least one word')
    if not 0.0 <= config.label_smoothing < 1.0:
        raise ConfigException(f'label_smoothing must be in [0, 1), got {config.label_smoothing}')
    if config.learning_rate < 0:
        raise ConfigException(f'learning_rate must be >= 0, got {config.learning_rate}')
    if config.epochs < 0:
        raise ConfigException(f'epochs must be >= 0, got {config.epochs}')
    if config.ln_eps <= 0:
        raise ConfigException(f'ln_eps must be positive, got {config.ln_eps}')
    for std_name in ['init_std', 'embedding_init_std', 'decoder_init_std']:
        if getattr(config, std_name) <= 0:
            raise ConfigException(f'{std_name} must be positive')
    if set(config.trainable) != set(COMPONENTS):
        raise ConfigException(f'trainable must name exactly {COMPONENTS}, got {sorted(config.trainable)}')
    if config.test_sampling not in TEST_SAMPLING:
        raise ConfigException(f'test_sampling must be one of {TEST_SAMPLING}, got {config.test_sampling!r}')
    if len(config.vocab) > config.vocab_size - 2:
        raise ConfigException(f'vocab has {len(config.vocab)} words, only {config.vocab_size - 2} fit')


def _check_keys(section: str, data: dict, expected: list[str]):
    if not isinstance(data, dict):
        raise ConfigException(f'{section} must be a JSON object')
    unknown = sorted(set(data) - set(expected))
    missing = sorted(set(expected) - set(data))
    if unknown:
        raise ConfigException(f'unknown key(s) in {section}: {unknown}')
    if missing:
        raise ConfigException(f'missing key(s) in {section}: {missing}')


def _typed(section: str, data: dict, types: dict) -> dict:
    out = {}
    for key, kind in types.items():
        value = data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if kind is int and isinstance(value, bool) or not isinstance(value, kind):
            raise ConfigException(f'{section}.{key} must be {kind.__name__}, got {value!r}')
        out[key] = value
    return out


def config_from_json(data: dict) -> PipelineConfig:
    top_types = {
        'vocab_size': int, 'max_text_len': int, 'max_answer_len': int, 'label_smoothing': float,
        'learning_rate': float, 'batch_size': int, 'epochs': int, 'seed': int, 'init_std': float,
        'embedding_init_std': float, 'decoder_init_std': float, 'ln_eps': float, 'data_alignment': bool,
        'feature_alignment': bool, 'test_sampling': str, 'prompt': str,
    }
    _check_keys('config', data, list(top_types) + ['perceiver', 'vqformer', 'encoder', 'trainable', 'vocab'])

    _check_keys('perceiver', data['perceiver'], list(PerceiverConfig._fields))
    perceiver = PerceiverConfig(**_typed('perceiver', data['perceiver'], {k: int for k in PerceiverConfig._fields}))

    _check_keys('vqformer', data['vqformer'], list(VQFormerConfig._fields))
    vqformer = VQFormerConfig(**_typed('vqformer', data['vqformer'],
                                       {'d': int, 'd_text': int, 'H': int, 'd_h': int, 's_q': float}))

    _check_keys('encoder', data['encoder'], list(EncoderConfig._fields))
    encoder = EncoderConfig(**_typed('encoder', data['encoder'], {k: int for k in EncoderConfig._fields}))

    _check_keys('trainable', data['trainable'], COMPONENTS)
    trainable = _typed('trainable', data['trainable'], {k: bool for k in COMPONENTS})

    vocab = data['vocab']
    if not isinstance(vocab, list) or not all(isinstance(w, str) for w in vocab):
        raise ConfigException('vocab must be a list of strings')

    config = PipelineConfig(perceiver=perceiver, vqformer=vqformer, encoder=encoder, trainable=trainable,
                            vocab=list(vocab), **_typed('config', data, top_types))
    validate(config)
    return config


def load_config(path: str, seed: int | None = None) -> PipelineConfig:
    """
    Read a config file, or a preset name such as 'desk'. Seed precedence: VAQUITA_SEED environment variable, then
    the seed argument (the --seed flag), then the config's own seed.
    """
    if path in PRESETS:
        config = PRESETS[path]()
    else:
        try:
            with open(path, encoding='utf-8') as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigException(f'{path}: no such config file')
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            raise ConfigException(f'{path}: not valid JSON: {e}')
        config = config_from_json(data)

    env_seed = os.environ.get(SEED_ENV)
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigException(f'{SEED_ENV}={env_seed!r} is not an integer')
    if seed is not None:
        config = config._replace(seed=seed)
    return config


def write_config(config: PipelineConfig, path: str):
    with open(path, 'w') as f:
        json.dump(config.to_json(), f, indent=2, sort_keys=True)
        f.write('\n')
