"""Synthetic acoustic scenarios: steering matrices, sources and sensor noise.

Signals model a single filter-bank bin, so every quantity is complex. Latent
samples and steering entries have independent uniform real and imaginary
parts over ``sample_range``.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import source_variance
from .errors import InvalidConfig

CALIBRATION_SAMPLES = 15000

# Fixed purpose ids so each logical stream is independent of the others.
_PURPOSES = {
    'steering': 0,
    'calibration': 1,
    'signals': 2,
    'perturb': 3,
    'topology': 4,
    'scm_init': 5,
    'edge_weights': 6,
    'central_init': 7,
}


def rng_stream(seed, purpose, run=0):
    """Independent generator for one ``(seed, run, purpose)`` triple."""
    ss = np.random.SeedSequence(seed, spawn_key=(run, _PURPOSES[purpose]))
    return np.random.default_rng(ss)


def uniform_complex(rng, shape, sample_range=(-0.5, 0.5)):
    lo, hi = sample_range
    return rng.uniform(lo, hi, shape) + 1j * rng.uniform(lo, hi, shape)


@dataclass(frozen=True)
class ScenarioConfig:
    num_nodes: int
    sensors_per_node: tuple
    num_desired: int
    num_noise: int
    channels: int
    gevd_rank: int = None
    thermal_power_ratio: float = 0.10
    sample_range: tuple = (-0.5, 0.5)
    perturb_prob: float = 0.05
    freeze_frames: int = 30
    per_entry_perturb: bool = False
    ref_channels: tuple = None    # per-node local indices of the J references
    seed: int = 0

    def __post_init__(self):
        spn = self.sensors_per_node
        if np.isscalar(spn):
            spn = (int(spn),) * int(self.num_nodes)
        object.__setattr__(self, 'sensors_per_node', tuple(int(m) for m in spn))
        object.__setattr__(self, 'sample_range', tuple(float(v) for v in self.sample_range))
        if self.gevd_rank is None:
            object.__setattr__(self, 'gevd_rank', self.channels)
        if self.ref_channels is not None:
            object.__setattr__(self, 'ref_channels',
                               tuple(tuple(int(i) for i in r) for r in self.ref_channels))
        self.validate()

    def validate(self):
        K, J = self.num_nodes, self.channels
        if K < 1:
            raise InvalidConfig('num_nodes >= 1 violated')
        if len(self.sensors_per_node) != K:
            raise InvalidConfig('len(sensors_per_node) == num_nodes violated')
        if J < 1:
            raise InvalidConfig('channels J >= 1 violated')
        for k, m in enumerate(self.sensors_per_node):
            if m < J:
                raise InvalidConfig(f'M_k >= J violated at node {k} (M_k={m}, J={J})')
        if self.num_desired < 1:
            raise InvalidConfig('num_desired S >= 1 violated')
        if self.num_noise < 0:
            raise InvalidConfig('num_noise S_n >= 0 violated')
        if not 1 <= self.gevd_rank <= J:
            raise InvalidConfig(f'1 <= gevd_rank R <= J violated (R={self.gevd_rank}, J={J})')
        if not 0 <= self.perturb_prob <= 1:
            raise InvalidConfig('0 <= perturb_prob <= 1 violated')
        if not self.thermal_power_ratio > 0:
            raise InvalidConfig('thermal_power_ratio > 0 violated')
        if self.freeze_frames < 0:
            raise InvalidConfig('freeze_frames >= 0 violated')
        lo, hi = self.sample_range
        if not lo < hi:
            raise InvalidConfig('sample_range must be an increasing interval')
        if self.ref_channels is not None:
            if len(self.ref_channels) != K:
                raise InvalidConfig('ref_channels needs one index list per node')
            for k, idx in enumerate(self.ref_channels):
                if len(idx) != J or len(set(idx)) != J:
                    raise InvalidConfig(f'ref_channels[{k}] must hold J distinct indices')
                if min(idx) < 0 or max(idx) >= self.sensors_per_node[k]:
                    raise InvalidConfig(f'ref_channels[{k}] out of range')

    @property
    def total_sensors(self):
        return sum(self.sensors_per_node)

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.sensors_per_node)]).astype(int)


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    a: np.ndarray              # M x S desired steering
    b: np.ndarray              # M x S_n noise steering
    thermal_std: np.ndarray    # per node, RMS of the complex thermal noise
    e_kk: tuple                # per node, local indices of the references
    cooldown: int = 0          # frames left during which no change may fire

    def node_slice(self, k):
        off = self.config.offsets
        return slice(off[k], off[k + 1])

    def global_refs(self, k):
        """Global sensor indices of node ``k``'s desired channels."""
        return [self.config.offsets[k] + i for i in self.e_kk[k]]

    def split(self, x):
        """Split an ``M x ...`` array into per-node blocks."""
        return [x[self.node_slice(k)] for k in range(self.config.num_nodes)]


@dataclass
class SignalFrame:
    y: np.ndarray          # M x B mixture
    s: np.ndarray          # M x B desired component
    n: np.ndarray          # M x B noise component (localized + thermal)
    d: list = field(default_factory=list)   # per node J x B desired reference

    @property
    def num_samples(self):
        return self.y.shape[1]


def _draw_steering(cfg, rng):
    m = cfg.total_sensors
    a = uniform_complex(rng, (m, cfg.num_desired), cfg.sample_range)
    b = uniform_complex(rng, (m, cfg.num_noise), cfg.sample_range)
    return a, b


def _calibrate_thermal(cfg, a, rng):
    lat = uniform_complex(rng, (cfg.num_desired, CALIBRATION_SAMPLES), cfg.sample_range)
    first = cfg.offsets[:-1]
    s_first = a[first] @ lat
    power = np.mean(np.abs(s_first) ** 2, axis=1)
    return np.sqrt(cfg.thermal_power_ratio * power)


def make_scenario(config, run=0):
    """Draw steering matrices and calibrate per-node thermal noise.

    The thermal RMS of node ``k`` is set so its power equals
    ``thermal_power_ratio`` times the desired-signal power seen at the node's
    first sensor, measured on a separate calibration batch. ``run`` selects
    the Monte-Carlo repetition, so different runs draw independent scenarios.
    """
    config.validate()
    a, b = _draw_steering(config, rng_stream(config.seed, 'steering', run))
    thermal = _calibrate_thermal(config, a, rng_stream(config.seed, 'calibration', run))
    if config.ref_channels is None:
        e_kk = tuple(tuple(range(config.channels)) for _ in range(config.num_nodes))
    else:
        e_kk = config.ref_channels
    return Scenario(config=config, a=a, b=b, thermal_std=thermal, e_kk=e_kk)


def draw_frame(scenario, frame_len, rng):
    """Draw ``frame_len`` fresh samples of every source and sensor noise."""
    if frame_len < 1:
        raise ValueError('frame_len must be >= 1')
    cfg = scenario.config
    rng_range = cfg.sample_range
    s_lat = uniform_complex(rng, (cfg.num_desired, frame_len), rng_range)
    n_lat = uniform_complex(rng, (cfg.num_noise, frame_len), rng_range)
    q = uniform_complex(rng, (cfg.total_sensors, frame_len), rng_range)
    scale = np.repeat(scenario.thermal_std, cfg.sensors_per_node) / np.sqrt(source_variance(rng_range))
    s = scenario.a @ s_lat
    n = scenario.b @ n_lat + scale[:, np.newaxis] * q
    y = s + n
    d = [s[scenario.global_refs(k)] for k in range(cfg.num_nodes)]
    return SignalFrame(y=y, s=s, n=n, d=d)


def perturb_steering(scenario, rng):
    """Possibly redraw the steering matrices for the next frame.

    A change fires with probability ``perturb_prob`` unless a previous change
    happened within the last ``freeze_frames`` calls. By default a fired event
    redraws every entry of ``A`` and ``B``; with ``per_entry_perturb`` each
    entry is redrawn independently with probability ``perturb_prob`` instead.

    Returns ``(scenario, changed)``; the input is never modified.
    """
    cfg = scenario.config
    if scenario.cooldown > 0:
        return replace(scenario, cooldown=scenario.cooldown - 1), False
    if cfg.perturb_prob <= 0:
        return scenario, False
    if cfg.per_entry_perturb:
        a_new, b_new = _draw_steering(cfg, rng)
        mask_a = rng.random(scenario.a.shape) < cfg.perturb_prob
        mask_b = rng.random(scenario.b.shape) < cfg.perturb_prob
        if not (mask_a.any() or mask_b.any()):
            return scenario, False
        a = np.where(mask_a, a_new, scenario.a)
        b = np.where(mask_b, b_new, scenario.b)
    else:
        if rng.random() >= cfg.perturb_prob:
            return scenario, False
        a, b = _draw_steering(cfg, rng)
    return replace(scenario, a=a, b=b, cooldown=cfg.freeze_frames), True
