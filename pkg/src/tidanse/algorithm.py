"""TI-DANSE and TI-GEVD-DANSE iteration engine with G-normalization.

One call to `run_iteration` performs a full round of the sequential
algorithm: prune a tree rooted at the updating node, fuse and sum the local
signals in-network, refresh the observation SCMs, update the filter of the
updating node (compensating the others for the current normalization),
refresh the fusion matrices, compute the next normalization factor at the
reference node and produce the per-node estimates.

The normalization factor ``gamma`` is incremental: it scales the fused
signals of one iteration and is then absorbed into every node's fusion
matrix by the refresh ``P = W_kk G^{-1}``. The fusion matrices that actually
generated iteration ``i``'s observations are therefore ``gamma^i * P^i``;
these are the ones used for the network-wide expansion.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import covariance as cov
from .beamformers import gevd_mwf, mwf, selection_matrix
from .errors import DegenerateGamma, DegenerateNormalization, ShapeMismatch
from .wasn import build_observation, flood, gather_partial_sums, gather_sum, prune_tree

log = logging.getLogger(__name__)

GAMMA_FLOOR = 1e-12
G_COND_LIMIT = 1e12

ALGORITHMS = ('tidanse', 'tigevd')
SCM_POLICIES = ('batch', 'online', 'exact')


@dataclass
class NodeState:
    k: int
    w_kk: np.ndarray           # M_k x J, applied to local sensors
    g_k: np.ndarray            # J x J, applied to eta_{-k}
    p_k: np.ndarray            # M_k x J fusion matrix
    sel: tuple                 # local indices of the desired channels
    scm: cov.ScmPair = None

    @property
    def m_k(self):
        return self.w_kk.shape[0]

    @property
    def j(self):
        return self.w_kk.shape[1]

    @property
    def w_tilde(self):
        return np.vstack([self.w_kk, self.g_k])

    def set_w_tilde(self, w_tilde):
        self.w_kk = w_tilde[:self.m_k].copy()
        self.g_k = w_tilde[self.m_k:].copy()


@dataclass
class EngineOptions:
    algorithm: str = 'tigevd'
    rank: int = None               # GEVD rank R; defaults to J
    normalized: bool = True
    scm_policy: str = 'online'
    beta: float = 0.7
    per_sample: bool = False       # per-sample instead of per-frame SCM recursion
    gamma_cadence: int = 1
    reference: int = 0
    edge_weights: str = 'random'   # 'unit' or 'random' (redrawn every iteration)
    noise_scm_from: str = 'noise'  # 'noise' (oracle) or 'mixture'
    clamp: bool = True             # floor the GEVD gains at 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f'algorithm must be one of {ALGORITHMS}')
        if self.scm_policy not in SCM_POLICIES:
            raise ValueError(f'scm_policy must be one of {SCM_POLICIES}')
        if self.edge_weights not in ('unit', 'random'):
            raise ValueError("edge_weights must be 'unit' or 'random'")
        if self.noise_scm_from not in ('noise', 'mixture'):
            raise ValueError("noise_scm_from must be 'noise' or 'mixture'")
        if self.gamma_cadence < 1:
            raise ValueError('gamma_cadence must be >= 1')


@dataclass
class IterationState:
    nodes: list
    i: int = 0
    u: int = 0
    reference: int = 0
    gamma: float = 1.0
    tree: object = None
    pinv_count: int = 0

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def fusion(self):
        return [n.p_k for n in self.nodes]


@dataclass
class IterationRecord:
    """What one iteration produced, before metrics are applied."""
    i: int
    u: int
    gamma_used: float              # factor applied to this iteration's fused signals
    gamma_next: float
    d_hat: list                    # per node J x B
    w_net: list                    # per node M x J network-wide filters
    g_norms: np.ndarray
    partial_sums: list = field(default_factory=list)   # per-node subtree sums of the fused mixture


def init_state(scenario, options, rng=None):
    """Selection-filter initialization: ``W_kk = E_kk``, ``G_k = I``, ``P_k = W_kk``.

    In online mode the SCMs start from random positive-definite matrices
    drawn from ``rng``.
    """
    cfg = scenario.config
    J = cfg.channels
    nodes = []
    for k, m_k in enumerate(cfg.sensors_per_node):
        w_kk = selection_matrix(m_k, scenario.e_kk[k])
        scm = None
        if options.scm_policy == 'online':
            d_k = m_k + J
            scm = cov.ScmPair(cov.random_init_scm(d_k, rng, cfg.sample_range),
                              cov.random_init_scm(d_k, rng, cfg.sample_range))
        nodes.append(NodeState(k=k, w_kk=w_kk, g_k=np.eye(J, dtype=complex),
                               p_k=w_kk.copy(), sel=tuple(scenario.e_kk[k]), scm=scm))
    return IterationState(nodes=nodes, reference=options.reference)


def fuse_local(state, y_k, gamma=1.0):
    """Normalized fused signal ``conj(gamma) P_k^H y_k``."""
    return np.conj(gamma) * (state.p_k.conj().T @ y_k)


def _split_filter(w_tilde, m_k):
    return w_tilde[:m_k], w_tilde[m_k:]


def tidanse_update(scm, sel):
    """Local MWF on the observation pencil; returns ``(w_kk, g_k)``."""
    d = scm.dim
    j = len(sel)
    f = mwf(scm.r_yy, scm.r_yy - scm.r_nn, sel)
    return _split_filter(f.w, d - j)


def tigevd_update(scm, rank, sel, clamp=True):
    """Rank-``rank`` GEVD-MWF on the observation pencil; returns ``(w_kk, g_k)``.

    ``r_nn`` receives diagonal loading if it fails to factor.
    """
    d = scm.dim
    j = len(sel)
    f = cov.with_loading(gevd_mwf, scm.r_yy, scm.r_nn, rank, sel, clamp=clamp)
    return _split_filter(f.w, d - j)


def compensate_non_updating(w_tilde, gamma, m_k, j):
    """Apply ``N^{-H}`` with ``N = blkdiag(I_{M_k}, gamma I_J)``.

    The local block is untouched and the G block is divided by
    ``conj(gamma)``.
    """
    if not np.isfinite(gamma) or abs(gamma) <= 1e-300:
        raise DegenerateGamma(f'gamma={gamma!r}')
    w_tilde = np.array(w_tilde, dtype=complex, copy=True)
    if w_tilde.shape[0] != m_k + j:
        raise ShapeMismatch(f'filter has {w_tilde.shape[0]} rows, expected {m_k + j}')
    w_tilde[m_k:] /= np.conj(gamma)
    return w_tilde


def compute_gamma(g_r):
    """Frobenius norm of the reference node's G block.

    Falls back to 1 (with a `DegenerateNormalization` warning) when the norm
    is below 1e-12, since dividing by it would amplify noise.
    """
    gamma = float(np.linalg.norm(g_r))
    if gamma < GAMMA_FLOOR:
        warnings.warn(f'||G_r||_F = {gamma:.3e} too small; gamma reset to 1',
                      DegenerateNormalization, stacklevel=2)
        return 1.0
    return gamma


def refresh_fusion(w_kk, g_k):
    """``P = W_kk G^{-1}``; returns ``(P, used_pinv)``.

    Uses the pseudo-inverse when ``cond(G) > 1e12``.
    """
    cond = np.linalg.cond(g_k)
    if not np.isfinite(cond) or cond > G_COND_LIMIT:
        return w_kk @ np.linalg.pinv(g_k), True
    # P G = W_kk  <=>  G^T P^T = W_kk^T
    return np.linalg.solve(g_k.T, w_kk.T).T, False


def network_wide_expand(fusion, k, w_kk, g_k):
    """``M x J`` network-wide filter of node ``k``.

    Block ``q != k`` is ``fusion[q] @ g_k`` and block ``k`` is ``w_kk``.
    """
    j = w_kk.shape[1]
    if g_k.shape != (j, j):
        raise ShapeMismatch(f'G block {g_k.shape} vs J={j}')
    blocks = []
    for q, p_q in enumerate(fusion):
        if q == k:
            if p_q.shape[0] != w_kk.shape[0]:
                raise ShapeMismatch(f'node {k} has {p_q.shape[0]} sensors, W_kk has {w_kk.shape[0]} rows')
            blocks.append(w_kk)
        else:
            if p_q.shape[1] != j:
                raise ShapeMismatch(f'fusion matrix {q} has {p_q.shape[1]} columns, expected {j}')
            blocks.append(p_q @ g_k)
    return np.vstack(blocks)


def observation_matrix(fusion, k):
    """``M x D_k`` matrix ``C_k`` such that the observation of node ``k`` is ``C_k^H y``."""
    sizes = [p.shape[0] for p in fusion]
    j = fusion[0].shape[1]
    m = sum(sizes)
    off = np.concatenate([[0], np.cumsum(sizes)])
    c = np.zeros((m, sizes[k] + j), dtype=complex)
    c[off[k]:off[k + 1], :sizes[k]] = np.eye(sizes[k])
    for q, p_q in enumerate(fusion):
        if q != k:
            c[off[q]:off[q + 1], sizes[k]:] = p_q
    return c


def _tree_weights(topology, options, rng):
    if options.edge_weights == 'random' and rng is not None:
        return topology.with_weights(rng.random(len(topology.edges)))
    return topology


def _fuse_and_sum(state, tree, signals, gamma):
    z = [fuse_local(node, sig, gamma) for node, sig in zip(state.nodes, signals)]
    partial = gather_partial_sums(tree, z)
    copies, _ = flood(tree, partial[tree.root])
    return z, copies, partial


def run_iteration(state, frame, options, topology, split, global_scms=None, rng=None):
    """Advance the algorithm by one iteration; ``state`` is updated in place.

    Parameters
    ----------
    state : IterationState
    frame : SignalFrame
        Signals of this iteration (the whole batch in batch mode).
    options : EngineOptions
    topology : Topology
        Ad-hoc graph the tree is pruned from.
    split : callable
        Splits an ``M x B`` array into per-node blocks.
    global_scms : tuple, optional
        ``(r_yy, r_nn)`` of the full sensor vector, required by the
        ``'exact'`` SCM policy.
    rng : Generator, optional
        Stream for random edge weights.

    Returns
    -------
    state, d_hat, record
    """
    K = state.num_nodes
    u = state.u
    gamma = state.gamma if options.normalized else 1.0
    J = state.nodes[0].j
    rank = options.rank or J

    tree = prune_tree(_tree_weights(topology, options, rng), u)
    state.tree = tree

    y_nodes = split(frame.y)
    n_src = frame.n if options.noise_scm_from == 'noise' else frame.y
    n_nodes = split(n_src)

    fusion_used = [gamma * p for p in state.fusion]
    partial = []
    if options.scm_policy != 'exact':
        z_y, eta_y, partial = _fuse_and_sum(state, tree, y_nodes, gamma)
        z_n, eta_n, _ = _fuse_and_sum(state, tree, n_nodes, gamma)

    m_sizes = [n.m_k for n in state.nodes]
    for k, node in enumerate(state.nodes):
        if options.scm_policy == 'online':
            yt = build_observation(y_nodes[k], eta_y[k], z_y[k])
            nt = build_observation(n_nodes[k], eta_n[k], z_n[k])
            n_k = cov.normalization_matrix(node.m_k, J, gamma)
            node.scm = cov.ScmPair(
                cov.normalized_ewma_update(node.scm.r_yy, yt, options.beta, n_k, options.per_sample),
                cov.normalized_ewma_update(node.scm.r_nn, nt, options.beta, n_k, options.per_sample),
                node.scm.frames_absorbed_yy + 1, node.scm.frames_absorbed_nn + 1)
        elif k == u:
            # batch and exact SCMs are rebuilt from scratch, so only the
            # updating node needs them
            if options.scm_policy == 'batch':
                yt = build_observation(y_nodes[k], eta_y[k], z_y[k])
                nt = build_observation(n_nodes[k], eta_n[k], z_n[k])
                node.scm = cov.ScmPair(cov.batch_scm(yt), cov.batch_scm(nt))
            else:
                c = observation_matrix(fusion_used, k)
                r_yy, r_nn = global_scms
                node.scm = cov.ScmPair(cov.hermitianize(c.conj().T @ r_yy @ c),
                                       cov.hermitianize(c.conj().T @ r_nn @ c))

        if k == u:
            if options.algorithm == 'tigevd':
                w_kk, g_k = tigevd_update(node.scm, rank, node.sel, clamp=options.clamp)
            else:
                w_kk, g_k = tidanse_update(node.scm, node.sel)
            node.w_kk, node.g_k = w_kk, g_k
        elif gamma != 1.0:
            node.set_w_tilde(compensate_non_updating(node.w_tilde, gamma, node.m_k, J))

    w_net = [network_wide_expand(fusion_used, k, n.w_kk, n.g_k)
             for k, n in enumerate(state.nodes)]

    for node in state.nodes:
        node.p_k, used_pinv = refresh_fusion(node.w_kk, node.g_k)
        if used_pinv:
            state.pinv_count += 1
            # warn once per run; later occurrences only show up in the counter
            level = logging.WARNING if state.pinv_count == 1 else logging.DEBUG
            log.log(level, 'ill-conditioned G at node %d (iteration %d); pseudo-inverse used',
                    node.k, state.i)

    g_norms = np.array([np.linalg.norm(n.g_k) for n in state.nodes])
    if options.normalized and (state.i + 1) % options.gamma_cadence == 0:
        gamma_next = compute_gamma(state.nodes[state.reference].g_k)
    else:
        gamma_next = 1.0

    # estimates with the refreshed fusion matrices; W and P are both expressed
    # before gamma_next is applied, which leaves the estimates unchanged
    z_new = [n.p_k.conj().T @ y_k for n, y_k in zip(state.nodes, y_nodes)]
    eta_new = gather_sum(tree, z_new)
    d_hat = [n.w_kk.conj().T @ y_k + n.g_k.conj().T @ (eta_new - z_k)
             for n, y_k, z_k in zip(state.nodes, y_nodes, z_new)]

    record = IterationRecord(i=state.i, u=u, gamma_used=float(np.real(gamma)),
                             gamma_next=gamma_next, d_hat=d_hat, w_net=w_net,
                             g_norms=g_norms, partial_sums=partial)
    state.gamma = gamma_next
    state.u = (u + 1) % K
    state.i += 1
    return state, d_hat, record
