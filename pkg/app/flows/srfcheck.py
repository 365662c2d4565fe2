# app/flows/srfcheck.py
"""
Super-, sub- and N-Ricci flow checks for time-dependent metric measure spaces.

Entropy profiles are sampled along W_t-geodesics built by optimal transport plus
displacement interpolation. Existential flavors search the shortest-path selections of
the optimal coupling; when the search was cut by the path cap a failure is reported as
"undetermined".
"""
from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence, Tuple

import logging
import math

import numpy as np
from pydantic import BaseModel
from scipy.integrate import trapezoid

from app.flows.convexity1d import SampledFunction1D, green_chi, is_k_convex, phi_N
from app.flows.tgs import estimate_controls
from app.flows.transport import (
    MeasurePath,
    ProbabilityVector,
    TdMmSpace,
    atom_position,
    entropy,
    interpolate_geodesic,
    selection_count,
    wasserstein,
    wasserstein_sq_at_index,
)
from app.settings import settings

logger = logging.getLogger(__name__)

MeasurePair = Tuple[ProbabilityVector, ProbabilityVector]

ABS_CONT_NOTE = "absolute continuity of tau -> S_t is checked as finiteness on the tau grid only"


class FlowVerdict(BaseModel):
    flavor: str                      # strong | moderate | N | averaged | sub | upper-K | log-ricci | weak-ricci
    status: str                      # pass | fail | undetermined
    holds: bool
    t: Optional[float] = None
    N: Optional[float] = None
    lam: Optional[float] = None
    epsilon: Optional[float] = None
    min_slack: float
    tolerance: float
    slacks: List[float] = []
    witness: Optional[Dict[str, Any]] = None
    skipped: int = 0
    notes: List[str] = []
    components: Dict[str, str] = {}


# ------------ Helpers ------------


def _combine(statuses: Sequence[str]) -> str:
    if "fail" in statuses:
        return "fail"
    if "undetermined" in statuses:
        return "undetermined"
    return "pass"


def _item_status(slack: float, tol: float, truncated: bool) -> str:
    if slack >= -tol:
        return "pass"
    return "undetermined" if truncated else "fail"


def _verdict(flavor: str, items: List[Tuple[float, str, Dict[str, Any]]], tol: float, **extra) -> FlowVerdict:
    """items: (slack, status, witness info) per checked configuration."""
    if not items:
        return FlowVerdict(
            flavor=flavor, status="fail", holds=False, min_slack=-math.inf, tolerance=tol,
            notes=extra.pop("notes", []) + ["no candidate geodesic"], **extra,
        )
    status = _combine([s for _, s, _ in items])
    worst = min(items, key=lambda it: it[0])
    return FlowVerdict(
        flavor=flavor,
        status=status,
        holds=status == "pass",
        min_slack=float(worst[0]),
        tolerance=tol,
        slacks=[float(s) for s, _, _ in items],
        witness=None if status == "pass" else worst[2],
        **extra,
    )


def _sub(a: float, b: float) -> float:
    if math.isinf(a) and math.isinf(b) and (a > 0) == (b > 0):
        return math.inf
    return a - b


def _profile(path: MeasurePath, tdmm: TdMmSpace, t: float) -> np.ndarray:
    return np.array([entropy(mu, tdmm, t) for mu in path.measures])


def _dw2_backward(tdmm: TdMmSpace, t: float, mu: ProbabilityVector, nu: ProbabilityVector) -> float:
    space = tdmm.space
    k = space.time_grid.index_of(t)
    if k == 0:
        raise ValueError("no left difference")
    dt = space.times[k] - space.times[k - 1]
    return (wasserstein_sq_at_index(space, k, mu, nu) - wasserstein_sq_at_index(space, k - 1, mu, nu)) / dt


def _taus() -> np.ndarray:
    return np.linspace(0.0, 1.0, settings.tau_nodes)


def _pair_info(mu: ProbabilityVector, nu: ProbabilityVector, **more) -> Dict[str, Any]:
    info: Dict[str, Any] = {"mu_support": mu.support, "nu_support": nu.support}
    info.update(more)
    return info


def _candidates(tdmm: TdMmSpace, t: float, mu: ProbabilityVector, nu: ProbabilityVector, taus=None):
    """Measure geodesics over the shortest-path selections of one optimal coupling."""
    taus = _taus() if taus is None else taus
    _, coupling = wasserstein(tdmm.space, t, mu, nu)
    count, truncated = selection_count(tdmm.space, t, coupling)
    paths = [interpolate_geodesic(tdmm.space, t, mu, nu, taus, selection=k, coupling=coupling) for k in range(count)]
    return paths, truncated


def _strong_slack(S: np.ndarray, taus: np.ndarray, dw2: float) -> float:
    left = _sub(S[1], S[0]) / (taus[1] - taus[0])
    right = _sub(S[-1], S[-2]) / (taus[-1] - taus[-2])
    return _sub(right, left) + 0.5 * dw2


def _tau_index(taus: np.ndarray, tau: float) -> int:
    return int(np.argmin(np.abs(taus - tau)))


def _moderate_slacks(S, taus, dw2, w2, lam, N=math.inf) -> List[float]:
    """
    Per tau in (0, 1/2]:
      1/tau [Phi(S0 - S(tau)) + Phi(S1 - S(1-tau))] + 1/2 dW^2 + tau lam W^2 - |S0 - S1|^2 / N'
    tested at N' = inf and at the smallest admissible N'.
    """
    out = []
    for i, tau in enumerate(taus):
        if not 0 < tau <= 0.5 + 1e-12:
            continue
        a = _sub(S[0], S[i])
        b = _sub(S[-1], S[_tau_index(taus, 1 - tau)])
        base = 0.5 * dw2 + tau * lam * w2
        cands = [math.inf]
        if not math.isinf(N):
            cands.append(max(N, 2 * tau * (abs(S[0] - S[-1]) + 0.5 * lam * w2)))
        out.append(min(
            (phi_N(a, n) + phi_N(b, n)) / tau + base - (0.0 if math.isinf(n) else (S[0] - S[-1]) ** 2 / n)
            for n in cands
        ))
    return out


def _resolve_lambda(tdmm: TdMmSpace, t: float, lam: Optional[float]) -> float:
    return estimate_controls(tdmm.space).lambda_at(t) if lam is None else float(lam)


# ------------ Measure corpus ------------


def default_pairs(tdmm: TdMmSpace, t: Optional[float] = None) -> List[MeasurePair]:
    """Point masses at maximal distance, smooth bumps around them, and uniform vs bump."""
    space = tdmm.space
    D = space.distance(space.times[0] if t is None else t)
    n = space.n_vertices
    x, y = np.unravel_index(int(np.argmax(D)), D.shape)
    x, y = int(x), int(y)
    positive = D[D > 0]
    width = max(float(D.max()) / 6.0, float(positive.min()) if positive.size else 1.0)

    def bump(c: int) -> ProbabilityVector:
        return ProbabilityVector.normalized(np.exp(-0.5 * (D[c] / width) ** 2))

    support = [v for v in range(n) if tdmm.m.weights[v] > 0]
    return [
        (ProbabilityVector.point_mass(x, n), ProbabilityVector.point_mass(y, n)),
        (bump(x), bump(y)),
        (ProbabilityVector.uniform(n, support), bump(y)),
    ]


def _finite_pairs(tdmm: TdMmSpace, t: float, pairs: Sequence[MeasurePair]):
    kept, skipped = [], 0
    for mu, nu in pairs:
        if math.isinf(entropy(mu, tdmm, t)) or math.isinf(entropy(nu, tdmm, t)):
            skipped += 1
            continue
        kept.append((mu, nu))
    if skipped:
        logger.info("%d measure pairs with infinite endpoint entropy skipped", skipped)
    return kept, skipped


# ------------ Super-Ricci flavors ------------


def check_super_ricci_strong(
    tdmm: TdMmSpace, t: float, pairs: Optional[Sequence[MeasurePair]] = None, tol: Optional[float] = None
) -> FlowVerdict:
    """d+S(1-) - d-S(0+) >= -1/2 dt- W^2(mu0, mu1) along the built W_t-geodesic."""
    tol = settings.default_tolerance if tol is None else tol
    tdmm.space.time_grid.left_neighbor(t)
    pairs, skipped = _finite_pairs(tdmm, t, pairs if pairs is not None else default_pairs(tdmm, t))
    items = []
    for mu, nu in pairs:
        path = interpolate_geodesic(tdmm.space, t, mu, nu, _taus())
        S = _profile(path, tdmm, t)
        slack = _strong_slack(S, path.taus, _dw2_backward(tdmm, t, mu, nu))
        items.append((slack, _item_status(slack, tol, False), _pair_info(mu, nu, entropy=S.tolist())))
    notes = [f"{skipped} pairs skipped (infinite entropy)"] if skipped else []
    return _verdict("strong", items, tol, t=float(t), skipped=skipped, notes=notes)


def check_super_ricci_moderate(
    tdmm: TdMmSpace,
    t: float,
    lam: Optional[float] = None,
    pairs: Optional[Sequence[MeasurePair]] = None,
    tol: Optional[float] = None,
) -> FlowVerdict:
    """Difference inequality for tau in (0, 1/2] along the best geodesic per pair."""
    return _moderate(tdmm, t, math.inf, lam, pairs, tol, "moderate")


def _moderate(tdmm, t, N, lam, pairs, tol, flavor) -> FlowVerdict:
    tol = settings.default_tolerance if tol is None else tol
    tdmm.space.time_grid.left_neighbor(t)
    lam = _resolve_lambda(tdmm, t, lam)
    pairs, skipped = _finite_pairs(tdmm, t, pairs if pairs is not None else default_pairs(tdmm, t))
    items = []
    for mu, nu in pairs:
        dw2 = _dw2_backward(tdmm, t, mu, nu)
        w2 = wasserstein(tdmm.space, t, mu, nu)[0] ** 2
        paths, truncated = _candidates(tdmm, t, mu, nu)
        best, best_sel = -math.inf, 0
        for k, path in enumerate(paths):
            slacks = _moderate_slacks(_profile(path, tdmm, t), path.taus, dw2, w2, lam, N)
            value = min(slacks) if slacks else math.inf
            if value > best:
                best, best_sel = value, k
        items.append((best, _item_status(best, tol, truncated), _pair_info(mu, nu, selection=best_sel)))
    notes = [f"{skipped} pairs skipped (infinite entropy)"] if skipped else []
    return _verdict(
        flavor, items, tol, t=float(t), lam=lam, N=None if math.isinf(N) else N, skipped=skipped, notes=notes
    )


def check_super_N_ricci(
    tdmm: TdMmSpace,
    t: float,
    N: float,
    lam: Optional[float] = None,
    pairs: Optional[Sequence[MeasurePair]] = None,
    tol: Optional[float] = None,
    moderate: bool = False,
) -> FlowVerdict:
    """
    Strong form: d+S(1-) - d-S(0+) >= -1/2 dt- W^2 + |S0 - S1|^2 / N.
    With moderate=True (or an explicit lam) the Phi_{N'} difference form is used instead.
    """
    if not N >= 1:
        raise ValueError("N must lie in [1, inf].")
    if moderate or lam is not None:
        return _moderate(tdmm, t, N, lam, pairs, tol, "N")
    tol = settings.default_tolerance if tol is None else tol
    tdmm.space.time_grid.left_neighbor(t)
    pairs, skipped = _finite_pairs(tdmm, t, pairs if pairs is not None else default_pairs(tdmm, t))
    inv_n = 0.0 if math.isinf(N) else 1.0 / N
    items = []
    for mu, nu in pairs:
        path = interpolate_geodesic(tdmm.space, t, mu, nu, _taus())
        S = _profile(path, tdmm, t)
        slack = _strong_slack(S, path.taus, _dw2_backward(tdmm, t, mu, nu)) - inv_n * (S[0] - S[-1]) ** 2
        items.append((slack, _item_status(slack, tol, False), _pair_info(mu, nu, entropy=S.tolist())))
    return _verdict("N", items, tol, t=float(t), N=None if math.isinf(N) else N, skipped=skipped)


def check_averaged_flow(
    tdmm: TdMmSpace,
    J: Tuple[float, float],
    N: float = math.inf,
    lam: Optional[float] = None,
    pairs: Optional[Sequence[MeasurePair]] = None,
    tol: Optional[float] = None,
) -> FlowVerdict:
    """
    Time-averaged form on J = (r, s]:
      1/a [Phi(S_J0 - S_J(a)) + Phi(S_J1 - S_J(1-a))] >= -(W_s^2 - W_r^2) / (2(s-r)) - a W_{lam,J}^2 + |S_J0 - S_J1|^2 / N'
    S_J averages S_t over J by the trapezoid rule; the geodesic at each grid time is built at that time.
    """
    tol = settings.default_tolerance if tol is None else tol
    space = tdmm.space
    r, s = J
    ks = [space.time_grid.index_of(r), space.time_grid.index_of(s)]
    idx = list(range(ks[0], ks[1] + 1))
    if len(idx) < 3:
        raise ValueError("J must span at least 2 grid steps")
    times = space.times[idx]
    span = float(times[-1] - times[0])
    controls = estimate_controls(space) if lam is None else None
    lam_t = np.array([float(lam) if lam is not None else controls.lambda_at(float(tk)) for tk in times])
    taus = _taus()
    pairs, skipped = _finite_pairs(tdmm, float(times[-1]), pairs if pairs is not None else default_pairs(tdmm, s))

    items = []
    for mu, nu in pairs:
        w2 = np.array([wasserstein_sq_at_index(space, k, mu, nu) for k in idx])
        w2_lam = float(trapezoid(w2 * lam_t, times)) / span
        diff_term = (w2[-1] - w2[0]) / (2 * span)

        per_time = []
        truncated = False
        count = 1
        for k in idx:
            tk = float(space.times[k])
            _, coupling = wasserstein(space, tk, mu, nu)
            c, tr = selection_count(space, tk, coupling)
            count, truncated = max(count, c), truncated or tr
            per_time.append((tk, coupling))

        best, best_sel = -math.inf, 0
        for sel in range(count):
            prof = []
            for tk, coupling in per_time:
                path = interpolate_geodesic(space, tk, mu, nu, taus, selection=sel, coupling=coupling)
                prof.append(_profile(path, tdmm, tk))
            SJ = trapezoid(np.array(prof), times, axis=0) / span
            slacks = []
            for i, a in enumerate(taus):
                if not 0 < a <= 0.5 + 1e-12:
                    continue
                d0 = SJ[0] - SJ[i]
                d1 = SJ[-1] - SJ[_tau_index(taus, 1 - a)]
                cands = [math.inf]
                if not math.isinf(N):
                    cands.append(max(N, 2 * a * (abs(SJ[0] - SJ[-1]) + w2_lam)))
                slacks.append(min(
                    (phi_N(d0, n) + phi_N(d1, n)) / a + diff_term + a * w2_lam
                    - (0.0 if math.isinf(n) else (SJ[0] - SJ[-1]) ** 2 / n)
                    for n in cands
                ))
            value = min(slacks)
            if value > best:
                best, best_sel = value, sel
        items.append((best, _item_status(best, tol, truncated), _pair_info(mu, nu, selection=best_sel)))
    return _verdict(
        "averaged", items, tol, t=float(times[-1]), N=None if math.isinf(N) else N,
        lam=float(lam) if lam is not None else None, skipped=skipped,
    )


def check_log_ricci(
    tdmm: TdMmSpace, t: float, pairs: Optional[Sequence[MeasurePair]] = None, tol: Optional[float] = None
) -> FlowVerdict:
    """Entropy along the built geodesics is (-kappa_t W_t^2)-convex, kappa the upper control."""
    tol = settings.default_tolerance if tol is None else tol
    kappa = estimate_controls(tdmm.space).kappa_at(t)
    pairs, skipped = _finite_pairs(tdmm, t, pairs if pairs is not None else default_pairs(tdmm, t))
    items = []
    for mu, nu in pairs:
        w2 = wasserstein(tdmm.space, t, mu, nu)[0] ** 2
        path = interpolate_geodesic(tdmm.space, t, mu, nu, _taus())
        S = _profile(path, tdmm, t)
        if not np.all(np.isfinite(S)):
            skipped += 1
            continue
        v = is_k_convex(SampledFunction1D(path.taus, S), -kappa * w2, tol)
        items.append((v.min_slack, "pass" if v.holds else "fail", _pair_info(mu, nu, triple=v.witness)))
    return _verdict("log-ricci", items, tol, t=float(t), lam=kappa, skipped=skipped)


# ------------ Sub-Ricci and upper bounds ------------


def _check_partition(parts: Sequence[Sequence[int]], n: int) -> List[List[int]]:
    parts = [sorted(set(int(v) for v in p)) for p in parts]
    flat = [v for p in parts for v in p]
    if any(not p for p in parts) or sorted(flat) != list(range(n)):
        raise ValueError("partition must be a disjoint vertex cover")
    return parts


def _open_set_pairs(parts, pairs_of_open_sets, n):
    if pairs_of_open_sets is None:
        return [([x], [y]) for p in parts for x in p for y in p if x != y]
    owner = {v: i for i, p in enumerate(parts) for v in p}
    out = []
    for U0, U1 in pairs_of_open_sets:
        U0, U1 = sorted(set(U0)), sorted(set(U1))
        if not U0 or not U1:
            raise ValueError("open sets must be nonempty")
        if len({owner[v] for v in U0 + U1}) != 1:
            raise ValueError("open sets must lie in one part")
        out.append((U0, U1))
    return out


def _endpoint_measures(U0, U1, n) -> List[MeasurePair]:
    out = [(ProbabilityVector.uniform(n, U0), ProbabilityVector.uniform(n, U1))]
    for x in U0:
        for y in U1:
            if len(out) > settings.path_cap:
                return out
            if len(U0) > 1 or len(U1) > 1:
                out.append((ProbabilityVector.point_mass(x, n), ProbabilityVector.point_mass(y, n)))
    return out


def _sub_ricci_slack(tdmm: TdMmSpace, t: float, path: MeasurePath, epsilon: float) -> float:
    """
    min over interior nodes sigma < rho of
      -1/(2(rho-sigma)) dt+ W^2(mu^sigma, mu^rho) + eps - [dS(rho-) - dS(sigma-)]
    """
    space = tdmm.space
    k = space.time_grid.index_of(t)
    if k == space.time_grid.M:
        raise ValueError("no right difference")
    dt = space.times[k + 1] - space.times[k]
    S = _profile(path, tdmm, t)
    if not np.all(np.isfinite(S)):
        return -math.inf
    taus = path.taus
    back = np.diff(S) / np.diff(taus)       # back[i-1] = slope on (tau_{i-1}, tau_i]
    best = math.inf
    for i in range(1, taus.size - 1):
        for j in range(i + 1, taus.size - 1):
            mu, nu = path.measures[i], path.measures[j]
            dw2 = (wasserstein_sq_at_index(space, k + 1, mu, nu) - wasserstein_sq_at_index(space, k, mu, nu)) / dt
            rhs = -dw2 / (2 * (taus[j] - taus[i])) + epsilon
            best = min(best, rhs - (back[j - 1] - back[i - 1]))
    return best


def check_weak_sub_ricci(
    tdmm: TdMmSpace,
    t: float,
    epsilon: float,
    partition: Sequence[Sequence[int]],
    pairs_of_open_sets: Optional[Sequence[Tuple[Sequence[int], Sequence[int]]]] = None,
    tol: Optional[float] = None,
) -> FlowVerdict:
    """For each pair of open sets inside one part, some W_t-geodesic between them meets the sub-Ricci inequality."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    tol = settings.default_tolerance if tol is None else tol
    n = tdmm.space.n_vertices
    parts = _check_partition(partition, n)
    items = []
    for U0, U1 in _open_set_pairs(parts, pairs_of_open_sets, n):
        best, truncated_any = -math.inf, False
        for mu, nu in _endpoint_measures(U0, U1, n):
            if math.isinf(entropy(mu, tdmm, t)) or math.isinf(entropy(nu, tdmm, t)):
                continue
            paths, truncated = _candidates(tdmm, t, mu, nu)
            truncated_any = truncated_any or truncated
            for path in paths:
                best = max(best, _sub_ricci_slack(tdmm, t, path, epsilon))
                if best >= -tol:
                    break
            if best >= -tol:
                break
        items.append((best, _item_status(best, tol, truncated_any), {"U0": U0, "U1": U1}))
    if not items:
        return FlowVerdict(
            flavor="sub", status="pass", holds=True, t=float(t), epsilon=epsilon, min_slack=math.inf,
            tolerance=tol, notes=["no pair of open sets inside one part"],
        )
    return _verdict("sub", items, tol, t=float(t), epsilon=epsilon, notes=[ABS_CONT_NOTE])


def check_weak_ricci(
    tdmm: TdMmSpace,
    t: float,
    epsilon: float,
    partition: Sequence[Sequence[int]],
    pairs_of_open_sets=None,
    pairs: Optional[Sequence[MeasurePair]] = None,
    tol: Optional[float] = None,
) -> FlowVerdict:
    """Super-Ricci (strong) together with weak sub-Ricci at the same time."""
    sup = check_super_ricci_strong(tdmm, t, pairs, tol)
    sub = check_weak_sub_ricci(tdmm, t, epsilon, partition, pairs_of_open_sets, tol)
    status = _combine([sup.status, sub.status])
    return FlowVerdict(
        flavor="weak-ricci",
        status=status,
        holds=sup.holds and sub.holds,
        t=float(t),
        epsilon=epsilon,
        min_slack=min(sup.min_slack, sub.min_slack),
        tolerance=sup.tolerance,
        slacks=sup.slacks + sub.slacks,
        witness=sup.witness or sub.witness,
        notes=sub.notes,
        components={"strong": sup.status, "sub": sub.status},
    )


def _variable_bound(tdmm: TdMmSpace, t: float, path: MeasurePath, selection: int, k_prime, i: int, j: int, l: int) -> float:
    """(sigma-rho) int_rho^sigma chi(u, (a-rho)/(sigma-rho)) k'(gamma^a) |gamma'|^2 da, averaged over the coupling."""
    taus = path.taus
    rho, tau, sig = taus[i], taus[j], taus[l]
    u = (tau - rho) / (sig - rho)
    D = tdmm.space.distance(t)
    a_grid = np.linspace(rho, sig, 9)
    total = 0.0
    for x, y, q in path.coupling.atoms():
        vals = [
            green_chi(u, (a - rho) / (sig - rho)) * k_prime[atom_position(tdmm.space, t, x, y, float(a), selection)]
            for a in a_grid
        ]
        total += q * D[x, y] ** 2 * trapezoid(np.array(vals), a_grid)
    return (sig - rho) * total


def check_upper_ricci_static(
    tdmm: TdMmSpace,
    K: float,
    Kprime: float,
    covering: Sequence[Sequence[int]],
    tol: Optional[float] = None,
    t: Optional[float] = None,
    k_variable: Optional[Sequence[float]] = None,
) -> FlowVerdict:
    """
    Ricci curvature <= K on one slice: inside each part, every pair of vertices is joined by
    a geodesic along which S is K'-concave over all interior triples rho < tau < sigma.
    k_variable (per vertex, > K pointwise) switches to the variable-bound form.
    """
    if Kprime <= K:
        raise ValueError("K' must exceed K")
    tol = settings.default_tolerance if tol is None else tol
    space = tdmm.space
    t = float(space.times[0]) if t is None else t
    n = space.n_vertices
    k_prime = None if k_variable is None else np.asarray(k_variable, dtype=float)
    if k_prime is not None and k_prime.shape != (n,):
        raise ValueError("k_variable needs one value per vertex")
    parts = [sorted(set(int(v) for v in p)) for p in covering]
    if any(not p for p in parts) or set(v for p in parts for v in p) != set(range(n)):
        raise ValueError("covering must be nonempty vertex sets covering the space")

    items = []
    informative = False
    for part in parts:
        for a in part:
            for b in part:
                if b <= a:
                    continue
                mu, nu = ProbabilityVector.point_mass(a, n), ProbabilityVector.point_mass(b, n)
                paths, truncated = _candidates(tdmm, t, mu, nu)
                best = -math.inf
                for sel, path in enumerate(paths):
                    S = _profile(path, tdmm, t)
                    if not np.all(np.isfinite(S)):
                        continue
                    informative = informative or float(np.ptp(S)) > tol
                    taus = path.taus
                    inner = range(1, taus.size - 1)
                    kt = space.time_grid.index_of(t)
                    w2_cache: Dict[Tuple[int, int], float] = {}
                    worst = math.inf
                    for i in inner:
                        for j in inner:
                            for l in inner:
                                if not i < j < l:
                                    continue
                                rho, tau, sig = taus[i], taus[j], taus[l]
                                interp = ((sig - tau) * S[i] + (tau - rho) * S[l]) / (sig - rho)
                                if k_prime is None:
                                    if (i, l) not in w2_cache:
                                        w2_cache[(i, l)] = wasserstein_sq_at_index(space, kt, path.measures[i], path.measures[l])
                                    bound = 0.5 * Kprime * (tau - rho) * (sig - tau) / (sig - rho) ** 2 * w2_cache[(i, l)]
                                else:
                                    bound = _variable_bound(tdmm, t, path, sel, k_prime, i, j, l)
                                worst = min(worst, S[j] - interp + bound)
                    best = max(best, worst)
                    if best >= -tol:
                        break
                items.append((best, _item_status(best, tol, truncated), {"pair": [a, b]}))
    verdict = _verdict("upper-K", items, tol, t=t, lam=None, notes=[f"K={K:g}, K'={Kprime:g}"])
    if items and not informative and verdict.status == "pass":
        # point masses on a uniform reference measure all have the same entropy
        verdict = verdict.model_copy(update={
            "status": "undetermined", "holds": False,
            "notes": verdict.notes + ["every candidate entropy profile is constant"],
        })
    return verdict
