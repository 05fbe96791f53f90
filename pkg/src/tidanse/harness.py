"""Experiment orchestration: descriptors, batch and online runs, trace files.

A descriptor is a TOML file with the sections ``[experiment]``,
``[scenario]``, ``[topology]``, ``[online]`` and ``[output]``. Unknown
sections or keys are rejected. Every Monte-Carlo run draws from its own
seeded streams, so run ``j`` does not depend on which other runs execute.
"""
import csv
import glob
import hashlib
import json
import logging
import os
import re
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import __version__
from .algorithm import EngineOptions, init_state, run_iteration
from .beamformers import gevd_mwf_multi, mwf
from .covariance import analytic_scm, batch_scm, ewma_update, random_init_scm
from .errors import InvalidConfig, TidanseError
from .metrics import STABLE, UNSTABLE, RunTraceRow, mse_d, mse_w
from .scenario import ScenarioConfig, draw_frame, make_scenario, perturb_steering, rng_stream
from .wasn import Topology, chain_topology, full_topology, random_topology, star_topology

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

MODES = ('batch', 'online')
TOPOLOGY_KINDS = ('random', 'chain', 'star', 'full', 'edges')


@dataclass(frozen=True)
class TopologySpec:
    kind: str = 'random'
    density: float = 0.3
    edges: tuple = None
    edge_weights: str = 'random'   # 'unit' or redrawn at random every iteration

    def build(self, num_nodes, rng):
        if self.kind == 'random':
            return random_topology(num_nodes, self.density, rng)
        if self.kind == 'chain':
            return chain_topology(num_nodes)
        if self.kind == 'star':
            return star_topology(num_nodes)
        if self.kind == 'full':
            return full_topology(num_nodes)
        return Topology(num_nodes, tuple(tuple(e) for e in self.edges))


@dataclass(frozen=True)
class ExperimentDescriptor:
    mode: str
    scenario: ScenarioConfig
    algorithm: str = 'tigevd'
    normalized: bool = False
    num_iterations: int = 150
    num_runs: int = 1
    frame_len: int = 15000
    scm_policy: str = None          # batch mode: 'batch' or 'exact'; online mode: 'online'
    ranks_to_sweep: tuple = ()
    reference: int = 0
    gamma_cadence: int = 1
    clamp: bool = True
    beta: float = 0.7
    per_sample: bool = False
    topology: TopologySpec = field(default_factory=TopologySpec)
    out_dir: str = 'out'
    source: str = ''                # raw descriptor text, hashed into the metadata

    def __post_init__(self):
        if self.scm_policy is None:
            object.__setattr__(self, 'scm_policy', 'batch' if self.mode == 'batch' else 'online')
        object.__setattr__(self, 'ranks_to_sweep', tuple(int(r) for r in self.ranks_to_sweep))
        self.validate()

    @property
    def seed(self):
        return self.scenario.seed

    def validate(self):
        if self.mode not in MODES:
            raise InvalidConfig(f'mode must be one of {MODES}, got {self.mode!r}')
        if self.algorithm not in ('tidanse', 'tigevd'):
            raise InvalidConfig(f"algorithm must be 'tidanse' or 'tigevd', got {self.algorithm!r}")
        if self.num_iterations < 1:
            raise InvalidConfig('num_iterations >= 1 violated')
        if self.num_runs < 1:
            raise InvalidConfig('num_runs >= 1 violated')
        if self.frame_len < 1:
            raise InvalidConfig('frame_len >= 1 violated')
        allowed = ('batch', 'exact') if self.mode == 'batch' else ('online',)
        if self.scm_policy not in allowed:
            raise InvalidConfig(f'scm_policy {self.scm_policy!r} not allowed in {self.mode} mode')
        if not 0 <= self.reference < self.scenario.num_nodes:
            raise InvalidConfig('0 <= reference < num_nodes violated')
        if self.gamma_cadence < 1:
            raise InvalidConfig('gamma_cadence >= 1 violated')
        if not 0 < self.beta < 1:
            raise InvalidConfig('0 < beta < 1 violated')
        for r in self.ranks_to_sweep:
            if r < 1 or r > min(self.scenario.sensors_per_node):
                raise InvalidConfig(f'swept rank {r} violates 1 <= J <= min(M_k)')
        topo = self.topology
        if topo.kind not in TOPOLOGY_KINDS:
            raise InvalidConfig(f'topology kind must be one of {TOPOLOGY_KINDS}')
        if topo.edge_weights not in ('unit', 'random'):
            raise InvalidConfig("edge_weights must be 'unit' or 'random'")
        if topo.kind == 'edges':
            if not topo.edges:
                raise InvalidConfig("topology kind 'edges' needs an edge list")
            try:
                Topology(self.scenario.num_nodes, tuple(tuple(e) for e in topo.edges))
            except (ValueError, TypeError) as exc:
                raise InvalidConfig(f'invalid edge list: {exc}') from None
        if topo.kind == 'random' and not 0 <= topo.density <= 1:
            raise InvalidConfig('0 <= density <= 1 violated')

    def engine_options(self):
        return EngineOptions(algorithm=self.algorithm, rank=self.scenario.gevd_rank,
                             normalized=self.normalized, scm_policy=self.scm_policy,
                             beta=self.beta, per_sample=self.per_sample,
                             gamma_cadence=self.gamma_cadence, reference=self.reference,
                             edge_weights=self.topology.edge_weights, clamp=self.clamp)

    def with_rank(self, rank):
        """Copy with ``J = R = rank``, as in a rank sweep."""
        sc = replace(self.scenario, channels=rank, gevd_rank=rank, ref_channels=None)
        return replace(self, scenario=sc)

    def sha256(self):
        return hashlib.sha256(self.source.encode()).hexdigest()


# allowed keys per section, mapped to descriptor or scenario fields
_SECTIONS = {
    'experiment': {'mode', 'algorithm', 'normalized', 'num_iterations', 'num_runs', 'frame_len',
                   'scm_policy', 'ranks_to_sweep', 'reference', 'gamma_cadence', 'clamp', 'seed'},
    'scenario': {'num_nodes', 'sensors_per_node', 'num_desired', 'num_noise', 'channels',
                 'gevd_rank', 'thermal_power_ratio', 'sample_range', 'perturb_prob',
                 'freeze_frames', 'per_entry_perturb', 'ref_channels'},
    'topology': {'kind', 'density', 'edges', 'edge_weights'},
    'online': {'beta', 'per_sample'},
    'output': {'dir'},
}
_REQUIRED = {'experiment': {'mode'},
             'scenario': {'num_nodes', 'sensors_per_node', 'num_desired', 'num_noise', 'channels'}}


def parse_descriptor(text):
    """Build an `ExperimentDescriptor` from TOML text."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfig(f'descriptor is not valid TOML: {exc}') from None
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise InvalidConfig(f'unknown section(s): {sorted(unknown)}')
    for name, keys in _SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise InvalidConfig(f'[{name}] must be a table')
        bad = set(section) - keys
        if bad:
            raise InvalidConfig(f'unknown key(s) in [{name}]: {sorted(bad)}')
        missing = _REQUIRED.get(name, set()) - set(section)
        if missing:
            raise InvalidConfig(f'missing key(s) in [{name}]: {sorted(missing)}')

    exp = dict(raw['experiment'])
    seed = int(exp.pop('seed', 0))
    try:
        scenario = ScenarioConfig(seed=seed, **raw['scenario'])
        topology = TopologySpec(**raw.get('topology', {}))
        online = raw.get('online', {})
        return ExperimentDescriptor(scenario=scenario, topology=topology,
                                    out_dir=raw.get('output', {}).get('dir', 'out'),
                                    source=text, **online, **exp)
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def load_descriptor(path):
    with open(path, encoding='utf-8') as fh:
        return parse_descriptor(fh.read())


@dataclass
class RunTrace:
    run: int
    seed: int
    rank: int
    rows: list
    stats: dict = field(default_factory=dict)


def _central_filters(desc, r_yy, r_nn, scenario):
    """Per-node centralized target filters for the configured algorithm."""
    sels = [scenario.global_refs(k) for k in range(scenario.config.num_nodes)]
    if desc.algorithm == 'tidanse':
        return [mwf(r_yy, r_yy - r_nn, sel).w for sel in sels]
    return [f.w for f in gevd_mwf_multi(r_yy, r_nn, desc.scenario.gevd_rank, sels, clamp=desc.clamp)]


def _nan_row(i, u, num_nodes, changed, central):
    nan = np.full(num_nodes, np.nan)
    return RunTraceRow(i=i, u=u, mse_w=nan, mse_d=nan.copy(), g_norm=nan.copy(), gamma=np.nan,
                       scenario_changed=changed, stability=UNSTABLE, mse_d_central=central)


def _finite(record):
    return (np.all(np.isfinite(record.g_norms))
            and all(np.all(np.isfinite(d)) for d in record.d_hat))


def _step(state, frame, opts, topology, split, global_scms, wrng):
    """One engine iteration; returns ``(record, None)`` or ``(None, reason)``."""
    try:
        with np.errstate(over='raise', invalid='raise', divide='raise'):
            _, _, record = run_iteration(state, frame, opts, topology, split,
                                         global_scms=global_scms, rng=wrng)
    except (FloatingPointError, np.linalg.LinAlgError, TidanseError) as exc:
        return None, f'{type(exc).__name__}: {exc}'
    if not _finite(record):
        return None, 'non-finite estimate'
    return record, None


def batch_steps(desc, run=0):
    """Iterate a batch run; yields ``(row, record, frame)`` per iteration.

    One batch of ``frame_len`` samples is drawn and reused at every
    iteration; the noise SCMs come from the noise-only component (oracle).
    After an instability the remaining rows are NaN with ``record=None``.
    """
    cfg, seed = desc.scenario, desc.seed
    scenario = make_scenario(cfg, run)
    frame = draw_frame(scenario, desc.frame_len, rng_stream(seed, 'signals', run))
    if desc.scm_policy == 'exact':
        r_yy, r_nn = analytic_scm(scenario)
    else:
        r_yy, r_nn = batch_scm(frame.y), batch_scm(frame.n)
    w_central = _central_filters(desc, r_yy, r_nn, scenario)
    d_central = [mse_d(w.conj().T @ frame.y, d) for w, d in zip(w_central, frame.d)]
    central = float(np.mean(d_central))

    opts = desc.engine_options()
    topology = desc.topology.build(cfg.num_nodes, rng_stream(seed, 'topology', run))
    wrng = rng_stream(seed, 'edge_weights', run)
    state = init_state(scenario, opts)
    unstable = False
    for i in range(desc.num_iterations):
        u = state.u
        record = None
        if not unstable:
            record, reason = _step(state, frame, opts, topology, scenario.split, (r_yy, r_nn), wrng)
            if record is None:
                log.warning('run %d unstable at iteration %d (%s)', run, i, reason)
                unstable = True
        if unstable:
            yield _nan_row(i, u, cfg.num_nodes, False, central), None, frame
            continue
        row = RunTraceRow(
            i=i, u=u,
            mse_w=np.array([mse_w(w, wc) for w, wc in zip(record.w_net, w_central)]),
            mse_d=np.array([mse_d(d, dt) for d, dt in zip(record.d_hat, frame.d)]),
            g_norm=record.g_norms, gamma=record.gamma_used, mse_d_central=central,
            extra={'pinv_count': state.pinv_count})
        yield row, record, frame


def online_steps(desc, run=0):
    """Iterate an online run; yields ``(row, record, frame)`` per frame.

    Every frame may first perturb the steering matrices, then feeds one
    engine iteration and one update of the centralized baseline, whose own
    forgetting-factor SCMs see exactly the same frames. After an instability
    the distributed columns are NaN while the baseline keeps running.
    """
    cfg, seed = desc.scenario, desc.seed
    scenario = make_scenario(cfg, run)
    opts = desc.engine_options()
    topology = desc.topology.build(cfg.num_nodes, rng_stream(seed, 'topology', run))
    wrng = rng_stream(seed, 'edge_weights', run)
    srng = rng_stream(seed, 'signals', run)
    prng = rng_stream(seed, 'perturb', run)
    state = init_state(scenario, opts, rng_stream(seed, 'scm_init', run))
    crng = rng_stream(seed, 'central_init', run)
    r_yy = random_init_scm(cfg.total_sensors, crng, cfg.sample_range)
    r_nn = random_init_scm(cfg.total_sensors, crng, cfg.sample_range)
    unstable = False
    for i in range(desc.num_iterations):
        scenario, changed = perturb_steering(scenario, prng)
        frame = draw_frame(scenario, desc.frame_len, srng)
        u = state.u
        record = None
        if not unstable:
            record, reason = _step(state, frame, opts, topology, scenario.split, None, wrng)
            if record is None:
                log.warning('run %d unstable at iteration %d (%s)', run, i, reason)
                unstable = True
        r_yy = ewma_update(r_yy, frame.y, desc.beta, desc.per_sample)
        r_nn = ewma_update(r_nn, frame.n, desc.beta, desc.per_sample)
        try:
            w_central = _central_filters(desc, r_yy, r_nn, scenario)
            central = float(np.mean([mse_d(w.conj().T @ frame.y, d)
                                     for w, d in zip(w_central, frame.d)]))
        except (np.linalg.LinAlgError, TidanseError) as exc:
            log.warning('centralized baseline failed at iteration %d: %s', i, exc)
            w_central, central = None, float('nan')
        if unstable:
            yield _nan_row(i, u, cfg.num_nodes, changed, central), None, frame
            continue
        if w_central is None:
            mw = np.full(cfg.num_nodes, np.nan)
        else:
            mw = np.array([mse_w(w, wc) for w, wc in zip(record.w_net, w_central)])
        row = RunTraceRow(
            i=i, u=u, mse_w=mw,
            mse_d=np.array([mse_d(d, dt) for d, dt in zip(record.d_hat, frame.d)]),
            g_norm=record.g_norms, gamma=record.gamma_used, scenario_changed=changed,
            mse_d_central=central, extra={'pinv_count': state.pinv_count})
        yield row, record, frame


def run_single(desc, run=0):
    """Execute one Monte-Carlo run and collect its trace."""
    steps = batch_steps if desc.mode == 'batch' else online_steps
    t0 = time.perf_counter()
    rows = [row for row, _, _ in steps(desc, run)]
    unstable_at = next((r.i for r in rows if r.stability == UNSTABLE), None)
    stable_rows = [r for r in rows if r.stability == STABLE]
    stats = {
        'elapsed_s': time.perf_counter() - t0,
        'unstable_at': unstable_at,
        'scenario_changes': [r.i for r in rows if r.scenario_changed],
        'pinv_count': stable_rows[-1].extra.get('pinv_count', 0) if stable_rows else 0,
    }
    return RunTrace(run=run, seed=desc.seed, rank=desc.scenario.gevd_rank, rows=rows, stats=stats)


def _run_many(desc, parallel):
    runs = range(desc.num_runs)
    if parallel and parallel > 1 and desc.num_runs > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(run_single, [desc] * desc.num_runs, runs))
    return [run_single(desc, j) for j in runs]


def run_batch_experiment(desc, parallel=1):
    if desc.mode != 'batch':
        raise InvalidConfig('run_batch_experiment needs mode = "batch"')
    return _run_many(desc, parallel)


def run_online_experiment(desc, parallel=1):
    if desc.mode != 'online':
        raise InvalidConfig('run_online_experiment needs mode = "online"')
    return _run_many(desc, parallel)


def run_experiment(desc, parallel=1):
    if desc.mode == 'batch':
        return run_batch_experiment(desc, parallel)
    return run_online_experiment(desc, parallel)


# ----------------------------------------------------------------------------
# output files

def trace_columns(num_nodes):
    cols = ['run', 'iter', 'u', 'scenario_changed', 'stability', 'gamma',
            'mean_mse_w', 'mean_mse_d', 'mean_g_norm', 'mse_d_central']
    for name in ('mse_w', 'mse_d', 'g_norm'):
        cols += [f'{name}_{k}' for k in range(num_nodes)]
    return cols


def _fmt(x):
    return '%.17e' % x


def write_trace(path, trace):
    num_nodes = len(trace.rows[0].mse_d)
    with open(path, 'w', newline='') as fh:
        out = csv.writer(fh)
        out.writerow(trace_columns(num_nodes))
        for r in trace.rows:
            means = [np.mean(r.mse_w), np.mean(r.mse_d), np.mean(r.g_norm)]
            out.writerow([trace.run, r.i, r.u, int(r.scenario_changed), r.stability, _fmt(r.gamma)]
                         + [_fmt(v) for v in means] + [_fmt(r.mse_d_central)]
                         + [_fmt(v) for v in np.concatenate([r.mse_w, r.mse_d, r.g_norm])])


def _meta(desc, traces):
    return {
        'version': __version__,
        'mode': desc.mode,
        'algorithm': desc.algorithm,
        'normalized': desc.normalized,
        'seed': desc.seed,
        'num_runs': desc.num_runs,
        'num_iterations': desc.num_iterations,
        'rank': desc.scenario.gevd_rank,
        'channels': desc.scenario.channels,
        'descriptor_sha256': desc.sha256(),
        'descriptor': {k: v for k, v in asdict(desc).items() if k != 'source'},
        'runs': [{'run': t.run, **t.stats} for t in traces],
    }


def write_outputs(out_dir, desc, traces):
    """Write ``trace_run<j>.csv`` per run and ``meta.json``; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for t in traces:
        path = os.path.join(out_dir, f'trace_run{t.run}.csv')
        write_trace(path, t)
        paths.append(path)
    meta_path = os.path.join(out_dir, 'meta.json')
    with open(meta_path, 'w') as fh:
        json.dump(_meta(desc, traces), fh, indent=2, default=_json_default)
    return paths + [meta_path]


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f'{type(obj).__name__} is not JSON serializable')


def sweep(desc, out_dir, parallel=1, ranks=None):
    """Run the experiment once per rank (``J = R``) into ``rank<R>/`` folders."""
    ranks = tuple(ranks or desc.ranks_to_sweep or (desc.scenario.gevd_rank,))
    results = {}
    for rank in ranks:
        sub = desc.with_rank(rank)
        traces = run_experiment(sub, parallel)
        write_outputs(os.path.join(out_dir, f'rank{rank}'), sub, traces)
        results[rank] = traces
    return results


def read_trace(path):
    with open(path, newline='') as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InvalidConfig(f'{path} holds no rows')
    return rows


_FIG_COLUMNS = ('mean_mse_d', 'mean_mse_w', 'mean_g_norm', 'mse_d_central')


def figure_data(trace_paths):
    """Average the per-iteration means of several runs.

    Returns a ``num_iterations x 5`` array: iteration, mean MSE_d, mean MSE_W,
    mean G norm and the centralized MSE_d. NaN rows of unstable runs
    propagate into the mean.
    """
    runs = [read_trace(p) for p in trace_paths]
    n_iter = len(runs[0])
    if any(len(r) != n_iter for r in runs):
        raise InvalidConfig('runs have different lengths')
    data = np.array([[[float(row[c]) for c in _FIG_COLUMNS] for row in r] for r in runs])
    iters = np.array([int(row['iter']) for row in runs[0]], dtype=float)
    return np.column_stack([iters, data.mean(axis=0)])


def _trace_paths(folder):
    paths = glob.glob(os.path.join(folder, 'trace_run*.csv'))
    return sorted(paths, key=lambda p: int(re.search(r'trace_run(\d+)\.csv$', p).group(1)))


def write_plot_data(out_dir):
    """Write ``figdata_*.csv`` for ``out_dir`` and any ``rank<R>/`` sub-folders."""
    targets = []
    if _trace_paths(out_dir):
        targets.append((out_dir, 'figdata_main.csv'))
    for sub in sorted(glob.glob(os.path.join(out_dir, 'rank*'))):
        m = re.search(r'rank(\d+)$', sub)
        if m and _trace_paths(sub):
            targets.append((sub, f'figdata_rank{m.group(1)}.csv'))
    if not targets:
        raise InvalidConfig(f'no trace_run*.csv files under {out_dir}')
    written = []
    for folder, name in targets:
        table = figure_data(_trace_paths(folder))
        path = os.path.join(out_dir, name)
        with open(path, 'w', newline='') as fh:
            out = csv.writer(fh)
            out.writerow(['iter', 'mean_mse_d', 'mean_mse_w', 'mean_g_norm', 'mse_d_central'])
            for row in table:
                out.writerow([int(row[0])] + [_fmt(v) for v in row[1:]])
        written.append(path)
    return written
