"""Measurement synthesis, direction estimators, and the per-frame tracking loop.

A frame spans T transmission blocks. Block 1 starts with the true beam pair
known; each later block steps the channel, builds a prior from the previous
block's estimate, allocates the pilot budget, synthesizes the received
symbols, and re-estimates the direction. Hits and beamforming gains are
recorded per tracked block.
"""

from dataclasses import dataclass, field

import numpy as np

from .allocate import StrategyConfig, apply_strategy, guarded_strategy, rank_pairs
from .astp import LinkBudget, prior_from_transition
from .channel import (
    ChannelState,
    CodebookConfig,
    CorrelationTables,
    TransitionModel,
    build_transition_model,
    correlation_tables,
    draw_gain,
    pair_index,
    pair_split,
    step_channel,
)

ESTIMATORS = ("power", "omp")


@dataclass(frozen=True)
class MeasurementSet:
    xi: np.ndarray  # accumulated complex readout per allocated pair
    per_symbol: np.ndarray  # raw received symbols in transmission order
    sensing_rows: np.ndarray  # per-symbol correlation row against the whole grid
    x_rx: int  # receive-grid size, needed to split flat pair indices


@dataclass(frozen=True)
class Estimate:
    aoa_index: int
    aod_index: int
    top_two_powers: tuple  # two largest decision statistics, descending

    def __post_init__(self):
        if self.aoa_index < 1 or self.aod_index < 1:
            raise ValueError("estimate indices are 1-based")
        if self.top_two_powers[0] < self.top_two_powers[1]:
            raise ValueError("top_two_powers must be descending")


def pair_rows(pairs, tables):
    """Correlation of each probe pair's beams against every grid direction,
    one row per pair, flat order (receive index fastest)."""
    rows = np.empty((len(pairs), tables.x_rx * tables.x_tx), complex)
    for m, z in enumerate(pairs):
        a, c = pair_split(z, tables.x_rx)
        rows[m] = np.kron(tables.nu_tx[c - 1, :], tables.nu_rx[a - 1, :])
    return rows


def synthesize_measurements(alloc, state, tables, budget, rng):
    """Received symbols for one block, pairs transmitted in allocation order
    with their repeats consecutive.

    Each symbol sees the channel through the probe beams' correlation with
    the true direction; noise is circular complex with variance noise_var
    (all real parts drawn first, then all imaginary parts). The per-pair
    readout xi accumulates each pair's symbols left to right so reruns are
    bitwise reproducible.
    """
    rows = pair_rows(alloc.pairs, tables)
    truth = pair_index(state.aoa_index, state.aod_index, tables.x_rx)
    mean = budget.gamma * state.gain * rows[:, truth - 1]
    reps = np.asarray(alloc.counts)
    m_total = alloc.budget
    noise = np.sqrt(budget.noise_var / 2.0) * (
        rng.standard_normal(m_total) + 1j * rng.standard_normal(m_total))
    per_symbol = np.repeat(mean, reps) + noise
    xi = np.empty(alloc.n_pairs, complex)
    start = 0
    for m, lam in enumerate(alloc.counts):
        acc = 0j
        for j in range(start, start + lam):
            acc += per_symbol[j]
        xi[m] = acc
        start += lam
    return MeasurementSet(xi=xi, per_symbol=per_symbol,
                          sensing_rows=np.repeat(rows, reps, axis=0),
                          x_rx=tables.x_rx)


def _top_two(values):
    if len(values) == 1:
        return float(values[0]), 0.0
    two = np.partition(values, len(values) - 2)[-2:]
    return float(two[1]), float(two[0])


def estimate_power(meas, alloc):
    """Pick the allocated pair with the largest accumulated power; exact ties
    go to the lowest flat pair index."""
    powers = np.abs(meas.xi) ** 2
    top = powers.max()
    z = min(p for p, v in zip(alloc.pairs, powers) if v == top)
    k, i = pair_split(z, meas.x_rx)
    return Estimate(aoa_index=k, aod_index=i, top_two_powers=_top_two(powers))


def estimate_omp(meas, tables, config, n_support=1):
    """Correlate the raw symbols against every grid column and take the
    argmax (ties to the lowest flat index).

    Structured as a matching-pursuit loop; with a single support element the
    residual peeled at the end of the pass is never consumed.
    """
    a = meas.sensing_rows
    residual = meas.per_symbol
    first_scores = None
    chosen = 0
    for _ in range(n_support):
        scores = np.abs(a.conj().T @ residual) ** 2
        if first_scores is None:
            first_scores = scores
            chosen = int(np.argmax(scores))
        col = a[:, int(np.argmax(scores))]
        energy = float(np.real(col.conj() @ col))
        coef = (col.conj() @ residual) / energy if energy > 0 else 0.0
        residual = residual - coef * col
    k, i = pair_split(chosen + 1, config.x_rx)
    return Estimate(aoa_index=k, aod_index=i, top_two_powers=_top_two(first_scores))


@dataclass
class Scenario:
    codebook: CodebookConfig
    tables: CorrelationTables
    model: TransitionModel
    budget: LinkBudget
    m_b: int
    t_blocks: int
    strategy: StrategyConfig
    estimator: str
    alloc_cache: dict = field(default_factory=dict)


def prepare_scenario(codebook, beta_rx, beta_tx, budget, m_b, t_blocks,
                     strategy, estimator):
    if t_blocks < 2:
        raise ValueError(f"t_blocks must be >= 2, got {t_blocks}")
    if m_b < 1:
        raise ValueError(f"m_b must be >= 1, got {m_b}")
    if estimator not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}, expected one of {ESTIMATORS}")
    return Scenario(codebook=codebook,
                    tables=correlation_tables(codebook),
                    model=build_transition_model(beta_rx, beta_tx, codebook),
                    budget=budget, m_b=m_b, t_blocks=t_blocks,
                    strategy=strategy, estimator=estimator)


@dataclass(frozen=True)
class FrameOutcome:
    hits: np.ndarray  # per tracked block, length t_blocks - 1
    gains: np.ndarray  # beamforming gain of the adopted pair per tracked block


def _allocation_for(scenario, k_est, i_est, strat):
    key = (k_est, i_est, strat.kind)
    alloc = scenario.alloc_cache.get(key)
    if alloc is None:
        prior = prior_from_transition(scenario.model, k_est, i_est)
        ranked = rank_pairs(prior)
        alloc = apply_strategy(strat, ranked, scenario.m_b, scenario.budget,
                               prior=prior, tables=scenario.tables)
        scenario.alloc_cache[key] = alloc
    return alloc


def run_frame(scenario, seed_seq):
    """One tracked frame; the seed sequence is split into independent channel
    and noise streams so paired comparisons can share channel realizations."""
    ch_seed, noise_seed = seed_seq.spawn(2)
    rng_ch = np.random.default_rng(ch_seed)
    rng_noise = np.random.default_rng(noise_seed)
    cb = scenario.codebook
    state = ChannelState(aoa_index=int(rng_ch.integers(1, cb.x_rx + 1)),
                         aod_index=int(rng_ch.integers(1, cb.x_tx + 1)),
                         gain=draw_gain(scenario.budget.gain_var, rng_ch),
                         gain_variance=scenario.budget.gain_var)
    k_est, i_est = state.aoa_index, state.aod_index  # first block knows the truth
    prev_stats = None
    n_tracked = scenario.t_blocks - 1
    hits = np.zeros(n_tracked, bool)
    gains = np.zeros(n_tracked)
    for b in range(n_tracked):
        state = step_channel(state, scenario.model, rng_ch)
        strat = guarded_strategy(prev_stats, scenario.strategy.omega,
                                 scenario.strategy, scenario.budget.noise_var)
        alloc = _allocation_for(scenario, k_est, i_est, strat)
        meas = synthesize_measurements(alloc, state, scenario.tables,
                                       scenario.budget, rng_noise)
        if scenario.estimator == "power":
            est = estimate_power(meas, alloc)
        else:
            est = estimate_omp(meas, scenario.tables, cb)
        hits[b] = (est.aoa_index == state.aoa_index
                   and est.aod_index == state.aod_index)
        gains[b] = (abs(scenario.tables.nu_rx[est.aoa_index - 1, state.aoa_index - 1]) ** 2
                    * abs(scenario.tables.nu_tx[est.aod_index - 1, state.aod_index - 1]) ** 2)
        k_est, i_est = est.aoa_index, est.aod_index
        prev_stats = est.top_two_powers
    return FrameOutcome(hits=hits, gains=gains)


def mc_omp_astp(alloc, prior, tables, budget, n_trials, rng, chunk=20_000):
    """Empirical prior-weighted success rate of the correlation estimator,
    batched over trials with the per-pair aggregated readouts (equivalent to
    running the estimator symbol by symbol)."""
    rows = pair_rows(alloc.pairs, tables)
    lam = np.asarray(alloc.counts, float)
    x = rows.shape[1]
    truths = rng.choice(x, size=n_trials, p=prior.weights)
    hits = 0
    scale = np.sqrt(budget.noise_var * lam / 2.0)
    for lo in range(0, n_trials, chunk):
        t = truths[lo:lo + chunk]
        m = len(t)
        alpha = np.sqrt(budget.gain_var / 2.0) * (
            rng.standard_normal(m) + 1j * rng.standard_normal(m))
        agg = scale * (rng.standard_normal((m, len(lam)))
                       + 1j * rng.standard_normal((m, len(lam))))
        agg += alpha[:, None] * (lam * budget.gamma * rows[:, t].T)
        scores = np.abs(agg @ rows.conj()) ** 2
        hits += int(np.sum(np.argmax(scores, axis=1) == t))
    return hits / n_trials
