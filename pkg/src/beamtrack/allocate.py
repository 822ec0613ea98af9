"""Training-budget allocation over ranked beam pairs.

Strategies split an integer pilot budget across candidate beam pairs ranked
by prior probability: uniform and proportional baselines, an exact
branch-and-bound optimizer of the tractable surrogate objective, a
closed-form allocator from the relaxed problem's stationarity conditions,
and a brute-force enumerator used both as a strategy and as a test oracle.
"""

import math
from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .astp import Allocation, approx_astp, gamma_closed_form, omp_astp_lower_bound
from .specfun import harmonic

STRATEGY_KINDS = ("uniform", "proportional", "exhaustive", "branch_and_bound",
                  "kkt", "omp_exhaustive")


@dataclass(frozen=True)
class StrategyConfig:
    kind: str
    omega: float = 5.0  # ambiguity threshold in noise-variance units
    candidate_cap: int | None = None  # None: cap at the budget size

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy kind {self.kind!r}, expected one of {STRATEGY_KINDS}")
        if not self.omega >= 0:
            raise ValueError(f"omega must be >= 0, got {self.omega}")
        if self.candidate_cap is not None and self.candidate_cap < 1:
            raise ValueError(f"candidate_cap must be >= 1, got {self.candidate_cap}")


@dataclass(frozen=True)
class RankedPairs:
    order: np.ndarray  # flat pair indices, heaviest prior first
    weights: np.ndarray  # matching prior masses, nonincreasing

    def __post_init__(self):
        order = np.asarray(self.order, int)
        weights = np.asarray(self.weights, float)
        object.__setattr__(self, "order", order)
        object.__setattr__(self, "weights", weights)
        if order.shape != weights.shape or order.ndim != 1:
            raise ValueError("order and weights must be 1-d and equally long")
        if np.any(np.diff(weights) > 1e-15):
            raise ValueError("weights must be nonincreasing")

    @property
    def size(self):
        return len(self.order)


@dataclass
class BBNode:
    fixed: dict  # coordinate -> pinned integer value
    bounds: tuple  # (lower, upper) float arrays, inclusive
    relaxation_value: float  # upper bound on the subtree, inherited until solved


def rank_pairs(prior):
    """Sort flat pair indices by descending prior mass, ties by ascending index."""
    w = np.asarray(prior.weights, float)
    idx = np.lexsort((np.arange(len(w)), -w))
    return RankedPairs(order=idx + 1, weights=w[idx])


def allocate_uniform(ranked, m_b):
    if m_b < 1:
        raise ValueError(f"budget must be >= 1, got {m_b}")
    if m_b > ranked.size:
        raise ValueError(f"budget {m_b} exceeds the {ranked.size} distinct pairs")
    return Allocation(pairs=tuple(ranked.order[:m_b]), counts=(1,) * m_b, budget=m_b)


def allocate_proportional(ranked, m_b, cap=None):
    """Largest-remainder apportionment of the budget by prior mass over the
    top-cap pairs; pairs apportioned zero are dropped."""
    if m_b < 1:
        raise ValueError(f"budget must be >= 1, got {m_b}")
    cap = min(cap if cap is not None else m_b, ranked.size, m_b)
    w = ranked.weights[:cap]
    mass = w.sum()
    if mass <= 0:
        raise ValueError("no prior mass on the candidate pairs")
    quota = m_b * w / mass
    counts = np.floor(quota).astype(int)
    frac = quota - counts
    short = m_b - int(counts.sum())
    counts[np.lexsort((np.arange(cap), -frac))[:short]] += 1
    keep = counts > 0
    return Allocation(pairs=tuple(ranked.order[:cap][keep]),
                      counts=tuple(counts[keep]), budget=m_b)


def round_repair(real_counts, m_b):
    """Round fractional counts to integers summing to the budget.

    Nearest-integer rounding (halves away from zero); a surplus of K is
    removed from the K entries that rounded up the most, a shortfall added to
    those that rounded down the most. Ties go to the later entry, and an
    entry is never pushed below 1; a blocked decrement shifts to the next
    entry in that order, cycling as needed.
    """
    real = np.asarray(real_counts, float)
    if abs(float(real.sum()) - m_b) > 1e-6:
        raise ValueError(f"fractional counts sum {real.sum()!r}, expected {m_b}")
    if np.any(real < 1.0 - 1e-9):
        raise ValueError("fractional counts must be >= 1")
    counts = np.floor(real + 0.5).astype(int)
    counts = np.maximum(counts, 1)
    n = len(counts)
    surplus = int(counts.sum()) - m_b
    if surplus > 0:
        order = np.lexsort((-np.arange(n), -(counts - real)))
        i = 0
        while surplus > 0:
            j = order[i % n]
            if counts[j] > 1:
                counts[j] -= 1
                surplus -= 1
            i += 1
    elif surplus < 0:
        order = np.lexsort((-np.arange(n), -(real - counts)))
        i = 0
        while surplus < 0:
            counts[order[i % n]] += 1
            surplus += 1
            i += 1
    return counts


def _even_split(m_b, n):
    base, rem = divmod(m_b, n)
    return tuple(base + 1 if j < rem else base for j in range(n))


# --------------------------------------------------------- branch and bound

def _neg_phi_prime(lam, m_b, r0):
    # -d/dlam of (m_b - lam)/(r0 lam^2 + lam): positive and decreasing on
    # lam in [1, m_b], which is what makes the per-pair surrogate concave
    den = r0 * lam * lam + lam
    return (den + (m_b - lam) * (2.0 * r0 * lam + 1.0)) / (den * den)


def _dual_fill(w_eff, lo, hi, target, m_b, r0):
    """Fill the box to the target total, equalizing the weighted marginal
    gain: bisection on the shared multiplier, per-coordinate bisection for
    each monotone marginal."""
    g_lo = w_eff * _neg_phi_prime(lo, m_b, r0)
    g_hi = w_eff * _neg_phi_prime(hi, m_b, r0)

    def lam_of(mu):
        lam = np.where(g_lo <= mu, lo, np.where(g_hi >= mu, hi, np.nan))
        free = np.isnan(lam)
        if np.any(free):
            a = lo[free].copy()
            b = hi[free].copy()
            wf = w_eff[free]
            for _ in range(48):
                mid = 0.5 * (a + b)
                go_up = wf * _neg_phi_prime(mid, m_b, r0) > mu
                a = np.where(go_up, mid, a)
                b = np.where(go_up, b, mid)
            lam[free] = 0.5 * (a + b)
        return lam

    mu_lo, mu_hi = 0.0, float(g_lo.max()) + 1.0
    for _ in range(80):
        mu = 0.5 * (mu_lo + mu_hi)
        if float(lam_of(mu).sum()) > target:
            mu_lo = mu
        else:
            mu_hi = mu
    lam = lam_of(0.5 * (mu_lo + mu_hi))
    resid = target - float(lam.sum())
    free = (lam > lo + 1e-9) & (lam < hi - 1e-9)
    if abs(resid) > 1e-12 and np.any(free):
        lam = lam.copy()
        lam[free] += resid / int(free.sum())
        lam = np.clip(lam, lo, hi)
    return lam


def _box_relaxation(w_eff, lo, hi, m_b, r0):
    """Continuous maximizer of the surrogate over box * budget plane, or None
    when the box is infeasible or the dual solve degenerates."""
    if float(lo.sum()) > m_b + 1e-9 or float(hi.sum()) < m_b - 1e-9:
        return None
    lam = lo.astype(float).copy()
    pos = w_eff > 0
    budget_pos = m_b - float(lo[~pos].sum())
    if pos.any():
        if float(hi[pos].sum()) <= budget_pos + 1e-12:
            lam[pos] = hi[pos]  # weightless coordinates soak up the rest
        else:
            lam[pos] = _dual_fill(w_eff[pos], lo[pos].astype(float),
                                  hi[pos].astype(float), budget_pos, m_b, r0)
    resid = m_b - float(lam.sum())
    for j in np.flatnonzero(~pos):
        add = min(hi[j] - lam[j], max(resid, 0.0))
        lam[j] += add
        resid -= add
    if abs(float(lam.sum()) - m_b) > 1e-7:
        return None
    return lam


def _fixed_of(lo, hi):
    return {int(j): int(lo[j]) for j in np.flatnonzero(lo == hi)}


def _bb_solve(w, m_b, r0, diag):
    """Exact integer maximizer of the surrogate for a fixed set of pairs.

    Depth-first over boxes; each node is bounded by its concave continuous
    relaxation, branched on the most fractional coordinate, and seeds the
    incumbent with the repaired rounding of the relaxed point.
    """
    n = len(w)
    if n == 1:
        return float(w[0]), (int(m_b),)
    if n == m_b:
        counts = (1,) * n
        return approx_astp(counts, w, m_b, r0), counts
    w_eff = w * (harmonic(n - 1) / (n - 1))
    best_val = -np.inf
    best = None

    def consider(int_counts):
        nonlocal best_val, best
        cand = tuple(sorted((int(c) for c in int_counts), reverse=True))
        val = approx_astp(cand, w, m_b, r0)
        if val > best_val:
            best_val, best = val, cand

    stack = [BBNode(fixed={}, bounds=(np.ones(n), np.full(n, float(m_b - n + 1))),
                    relaxation_value=np.inf)]
    while stack:
        node = stack.pop()
        diag["nodes"] += 1
        if node.relaxation_value <= best_val + 1e-12:
            continue
        lo, hi = node.bounds
        lam = _box_relaxation(w_eff, lo, hi, m_b, r0)
        if lam is None:
            if float(lo.sum()) > m_b + 1e-9 or float(hi.sum()) < m_b - 1e-9:
                continue
            # degenerate dual solve: keep the subtree alive under the coarse
            # box bound and split on the widest coordinate
            ub = approx_astp(hi, w, m_b, r0)
            if ub <= best_val + 1e-12:
                continue
            j = int(np.argmax(hi - lo))
            split = math.floor(0.5 * (lo[j] + hi[j]))
            children = _split_children(lo, hi, j, split, ub)
            stack.extend(children)
            continue
        ub = approx_astp(lam, w, m_b, r0) + 1e-8
        if ub <= best_val + 1e-12:
            continue
        try:
            consider(round_repair(lam, m_b))
        except ValueError:
            pass
        dist = np.abs(lam - np.round(lam))
        j = int(np.argmax(dist))
        if dist[j] < 1e-7:
            consider(np.round(lam).astype(int))
            continue
        down, up = _split_children(lo, hi, j, math.floor(lam[j]), ub)
        if lam[j] - math.floor(lam[j]) >= 0.5:
            stack.extend([down, up])  # ceil side explored first
        else:
            stack.extend([up, down])
    return best_val, best


def _split_children(lo, hi, j, split, ub):
    lo_d, hi_d = lo.copy(), hi.copy()
    hi_d[j] = float(split)
    lo_u, hi_u = lo.copy(), hi.copy()
    lo_u[j] = float(split + 1)
    return (BBNode(fixed=_fixed_of(lo_d, hi_d), bounds=(lo_d, hi_d), relaxation_value=ub),
            BBNode(fixed=_fixed_of(lo_u, hi_u), bounds=(lo_u, hi_u), relaxation_value=ub))


def allocate_bb(ranked, m_b, budget, cap=None, diagnostics=None):
    """Budget split maximizing the surrogate objective across every feasible
    number of probed pairs.

    Outer loop scans the pair count N downward, skipping the tail once the
    cumulative prior mass (an upper bound on any N-pair objective) falls to
    the incumbent; each N is solved exactly by branch-and-bound.
    """
    if m_b < 1:
        raise ValueError(f"budget must be >= 1, got {m_b}")
    diag = diagnostics if diagnostics is not None else {}
    diag.setdefault("visited_n", [])
    diag.setdefault("skipped_n", [])
    diag.setdefault("nodes", 0)
    n0 = min(m_b, ranked.size, cap if cap is not None else m_b)
    w_all = ranked.weights
    cum = np.cumsum(w_all)
    r0 = budget.r0
    best = _even_split(m_b, n0)
    best_val = approx_astp(best, w_all[:n0], m_b, r0)
    for n in range(n0, 0, -1):
        if cum[n - 1] <= best_val:
            diag["skipped_n"] = list(range(n, 0, -1))
            break
        diag["visited_n"].append(n)
        val, counts = _bb_solve(np.asarray(w_all[:n], float), m_b, r0, diag)
        if val > best_val:
            best_val, best = val, counts
    return Allocation(pairs=tuple(int(p) for p in ranked.order[:len(best)]),
                      counts=best, budget=m_b)


# ------------------------------------------------------- stationarity solve

def _stationary_roots(mu0, w, m_b, r0):
    """Positive root of mu0*r0*lam^3 + w*lam - 2*m_b*w = 0 per coordinate.

    Depressed cubic with one real root; zero-weight coordinates root at 0.
    """
    roots = np.zeros(len(w))
    pos = w > 0
    q = w[pos] / (mu0 * r0)
    m = m_b * q
    s = np.sqrt(m * m + (q / 3.0) ** 3)
    t = np.cbrt(m + s)
    roots[pos] = t - q / (3.0 * t)
    return roots


def _kkt_real_counts(w, m_b, r0):
    """Fractional counts from the relaxed problem's stationarity conditions.

    The shared multiplier is bisected (geometrically, the scale is unknown a
    priori) so the floored-at-1 roots total the budget; each root is then
    polished by a few Newton steps on its cubic. Returns None when no
    multiplier can reach the budget.
    """
    n = len(w)
    if not np.any(w > 0):
        return None

    def total(mu0):
        return float(np.maximum(1.0, _stationary_roots(mu0, w, m_b, r0)).sum())

    mu_lo = mu_hi = 1.0
    for _ in range(200):
        if total(mu_lo) >= m_b:
            break
        mu_lo *= 0.5
    else:
        return None
    for _ in range(200):
        if total(mu_hi) <= m_b:
            break
        mu_hi *= 2.0
    else:
        return None
    for _ in range(200):
        mid = math.sqrt(mu_lo * mu_hi)
        if total(mid) > m_b:
            mu_lo = mid
        else:
            mu_hi = mid
    mu0 = math.sqrt(mu_lo * mu_hi)
    roots = _stationary_roots(mu0, w, m_b, r0)
    pos = w > 0
    b = roots[pos]
    for _ in range(4):
        f = mu0 * r0 * b ** 3 + w[pos] * b - 2.0 * m_b * w[pos]
        b = b - f / (3.0 * mu0 * r0 * b * b + w[pos])
    roots[pos] = b
    real = np.maximum(1.0, roots)
    if abs(float(real.sum()) - m_b) > 1e-6:
        return None
    return real, mu0, roots


def allocate_kkt(ranked, m_b, budget, cap=None, diagnostics=None):
    """Same outer pair-count scan as allocate_bb, but each N is solved in
    closed form from the stationarity cubics and repaired to integers.

    A failed multiplier search falls back to an even split for that N and is
    flagged in diagnostics; solved roots are recorded there too so their
    residuals can be audited.
    """
    if m_b < 1:
        raise ValueError(f"budget must be >= 1, got {m_b}")
    diag = diagnostics if diagnostics is not None else {}
    diag.setdefault("visited_n", [])
    diag.setdefault("skipped_n", [])
    diag.setdefault("fallback_n", [])
    diag.setdefault("stationarity", [])
    n0 = min(m_b, ranked.size, cap if cap is not None else m_b)
    w_all = ranked.weights
    cum = np.cumsum(w_all)
    r0 = budget.r0
    best = _even_split(m_b, n0)
    best_val = approx_astp(best, w_all[:n0], m_b, r0)
    for n in range(n0, 0, -1):
        if cum[n - 1] <= best_val:
            diag["skipped_n"] = list(range(n, 0, -1))
            break
        diag["visited_n"].append(n)
        w = np.asarray(w_all[:n], float)
        if n == m_b:
            counts = np.ones(n, int)
        else:
            sol = _kkt_real_counts(w, m_b, r0)
            if sol is None:
                counts = np.asarray(_even_split(m_b, n), int)
                diag["fallback_n"].append(n)
            else:
                real, mu0, roots = sol
                diag["stationarity"].append(
                    {"n_pairs": n, "mu0": mu0, "roots": roots, "weights": w})
                counts = round_repair(real, m_b)
        counts = np.sort(counts)[::-1]
        val = approx_astp(counts, w, m_b, r0)
        if val > best_val:
            best_val, best = val, tuple(int(c) for c in counts)
    return Allocation(pairs=tuple(int(p) for p in ranked.order[:len(best)]),
                      counts=best, budget=m_b)


# ----------------------------------------------------------- brute force

EXHAUSTIVE_OBJECTIVES = ("closed_form", "approx", "omp_lower_bound")


def allocate_exhaustive(ranked, m_b, budget, objective="closed_form", cap=None,
                        limit=10_000_000, prior=None, tables=None):
    """Enumerate every multiset of the top-cap pairs and keep the objective
    maximizer; exact value ties go to the lexicographically smallest count
    vector."""
    if m_b < 1:
        raise ValueError(f"budget must be >= 1, got {m_b}")
    if objective not in EXHAUSTIVE_OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}, expected one of {EXHAUSTIVE_OBJECTIVES}")
    cap = min(cap if cap is not None else m_b, ranked.size, m_b)
    total = math.comb(m_b + cap - 1, cap - 1)
    if total > limit:
        raise ValueError(
            f"exhaustive search over {total} allocations exceeds the limit of "
            f"{limit}; reduce the budget or the candidate cap")
    if objective == "omp_lower_bound" and (prior is None or tables is None):
        raise ValueError("omp_lower_bound objective needs prior and tables")
    w = ranked.weights[:cap]
    top_pairs = ranked.order[:cap]
    r0 = budget.r0
    best = None
    for combo in combinations_with_replacement(range(cap), m_b):
        counts = np.bincount(np.asarray(combo, int), minlength=cap)
        keep = counts > 0
        alloc = Allocation(pairs=tuple(top_pairs[keep]),
                           counts=tuple(counts[keep]), budget=m_b)
        if objective == "closed_form":
            val = float(sum(w[j] * gamma_closed_form(pos + 1, alloc, budget)
                            for pos, j in enumerate(np.flatnonzero(keep))))
        elif objective == "approx":
            val = approx_astp(counts[keep], w[keep], m_b, r0)
        else:
            val = omp_astp_lower_bound(alloc, prior, tables, budget).value
        key = tuple(int(c) for c in counts)
        if best is None or val > best[0] or (val == best[0] and key < best[1]):
            best = (val, key, alloc)
    return best[2]


def guarded_strategy(prev_powers, omega, inner, noise_var):
    """Ambiguity guard on the previous block's readout: when the two largest
    accumulated powers are within omega noise-variance units, the upcoming
    block probes uniformly instead of trusting the inner strategy's prior
    concentration. No history (first tracked block) keeps the inner strategy.
    """
    if prev_powers is None:
        return inner
    ps = np.sort(np.asarray(prev_powers, float))[::-1]
    second = float(ps[1]) if len(ps) > 1 else 0.0
    if float(ps[0]) - second < omega * noise_var:
        return StrategyConfig(kind="uniform", omega=inner.omega,
                              candidate_cap=inner.candidate_cap)
    return inner


def apply_strategy(config, ranked, m_b, budget, prior=None, tables=None):
    """Route a strategy configuration to its allocator."""
    cap = config.candidate_cap
    if config.kind == "uniform":
        return allocate_uniform(ranked, m_b)
    if config.kind == "proportional":
        return allocate_proportional(ranked, m_b, cap=cap)
    if config.kind == "branch_and_bound":
        return allocate_bb(ranked, m_b, budget, cap=cap)
    if config.kind == "kkt":
        return allocate_kkt(ranked, m_b, budget, cap=cap)
    if config.kind == "exhaustive":
        return allocate_exhaustive(ranked, m_b, budget, objective="closed_form", cap=cap)
    return allocate_exhaustive(ranked, m_b, budget, objective="omp_lower_bound",
                               cap=cap, prior=prior, tables=tables)
