"""Critical-point searches for the broken-orbit action functional.

Descent (gradient phase plus Levenberg-Marquardt polish of the critical
equation), multi-start search for negative-action local minimizers,
string-method mountain passes between iterated endpoints, multiplicity
scans with deduplication, and the a-priori period/length bounds used to
sanity-box everything that is found.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .action import (DiscreteLoop, GradientVector, LoopEvaluator, SpectralReport,
                     discrete_hessian, iterate)
from .errors import (BrokenOrbitsError, MinimizerNotFound, NoConvergence,
                     PathBudgetExceeded, PeriodCollapse, SegmentFailure)
from .models import LagrangianModel
from .torus import TorusConfig


@dataclass
class DescentOptions:
    tol_crit: float = 1e-8
    switch_tol: float = 1e-3      # gradient norm at which LM polish takes over
    max_gd: int = 600
    max_lm: int = 80
    armijo: float = 1e-4
    alpha_init: float = 0.1
    tau_floor: float = 1e-6
    tau_cap: float = np.inf
    mode: str = "auto"            # "auto": GD then polish; "critical": polish only
    tol_rank: float | None = None
    extent_guard: float | None = None  # abort when the lift outgrows this


@dataclass
class OrbitRecord:
    """A (near-)critical broken loop together with its certificates."""

    loop: DiscreteLoop
    k: float
    action: float
    period: float
    gradient_norm: float
    energy_dev: float
    winding: tuple[int, int]
    spectral: SpectralReport | None = None
    simple: bool | None = None
    gd_iters: int = 0
    lm_iters: int = 0

    @property
    def is_local_min(self) -> bool:
        return (self.spectral is not None and self.spectral.ind_H == 0
                and self.spectral.ind_h == 0)

    def to_record(self) -> dict:
        rec = {
            "type": "orbit",
            "k": self.k,
            "h": self.loop.h,
            "tau": self.loop.tau,
            "period": self.period,
            "action": self.action,
            "gradient_norm": self.gradient_norm,
            "energy_dev": self.energy_dev,
            "winding": list(self.winding),
            "is_local_min": self.is_local_min,
            "simple": self.simple,
            "points": self.loop.points.tolist(),
        }
        if self.spectral is not None:
            rec["spectral"] = self.spectral.to_record()
        return rec


def _clip_tau(tau: float, opts: DescentOptions) -> float:
    return float(np.clip(tau, opts.tau_floor, opts.tau_cap))


def _finalize(model, k, loop, grad, ev, opts, gd_iters, lm_iters,
              with_spectral=True) -> OrbitRecord:
    segs = ev.segments(loop)
    action = loop.h * loop.tau * k + sum(s.action for s in segs)
    energy_dev = ev.energy_deviation(loop, segs)
    spectral = None
    if with_spectral:
        spectral = discrete_hessian(model, k, loop, tol_crit=10 * opts.tol_crit,
                                    tol_rank=opts.tol_rank, evaluator=ev)
    return OrbitRecord(
        loop=loop, k=k, action=action, period=loop.period,
        gradient_norm=grad.norm(), energy_dev=energy_dev,
        winding=loop.winding(model.torus), spectral=spectral,
        simple=polygon_self_intersections(loop.unwrapped_points(model.torus)) == 0,
        gd_iters=gd_iters, lm_iters=lm_iters)


def descend(model: LagrangianModel, k: float, seed: DiscreteLoop, *,
            opts: DescentOptions | None = None,
            with_spectral: bool = True) -> OrbitRecord:
    """Drive a seed loop to a critical point of the discrete action.

    Monotone Armijo gradient descent in the broken-orbit metric, handing
    over to a damped Gauss-Newton polish of the critical equation once the
    gradient is small (the polish also converges to saddles, which is what
    recovers non-minimizing orbits from nearby seeds).
    """
    opts = opts or DescentOptions()
    ev = LoopEvaluator(model, k)
    loop = seed.wrapped(model.torus)
    h = loop.h
    guard = opts.extent_guard
    if guard is None:
        guard = 2.2 * max(model.torus.side_lengths)

    grad, segs = ev.gradient_and_segments(loop)
    gnorm = grad.norm()
    gd_iters = 0
    alpha = opts.alpha_init
    floor_hits = 0

    if opts.mode != "critical":
        S = loop.h * loop.tau * k + sum(s.action for s in segs)
        while gnorm > opts.switch_tol and gd_iters < opts.max_gd:
            gsq = grad.metric_inner(grad)
            accepted = False
            while alpha > 1e-14:
                pts_new = loop.points - alpha * grad.w
                tau_new = _clip_tau(loop.tau - alpha * grad.mu, opts)
                cand = DiscreteLoop(points=model.torus.wrap(pts_new), tau=tau_new)
                try:
                    guesses = {i: segs[i].nu_minus for i in range(h)}
                    g_new, segs_new = ev.gradient_and_segments(cand, guesses)
                    S_new = cand.h * cand.tau * k + sum(s.action for s in segs_new)
                except SegmentFailure:
                    alpha *= 0.5
                    continue
                if S_new <= S - opts.armijo * alpha * gsq:
                    if tau_new <= opts.tau_floor * (1 + 1e-12):
                        floor_hits += 1
                        if floor_hits >= 5:
                            raise PeriodCollapse(
                                f"segment time pinned at floor {opts.tau_floor:.3e}")
                    else:
                        floor_hits = 0
                    loop, grad, segs, S = cand, g_new, segs_new, S_new
                    gnorm = grad.norm()
                    alpha = min(alpha * 1.5, 1e3)
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break  # stalled; the polish below may still finish the job
            gd_iters += 1
            if gd_iters % 10 == 0:
                ext = loop.unwrapped_points(model.torus)
                if float(np.max(ext.max(axis=0) - ext.min(axis=0))) > guard:
                    raise NoConvergence(
                        "descent escaping: loop lift exceeds the extent guard "
                        f"({guard:.2f}); the seed is outside any minimizer basin")
            if ev.cache_size > 200_000:
                ev.clear_cache()
        if gnorm > opts.switch_tol:
            # A stalled far-from-critical state must not be handed to the
            # polish: Gauss-Newton would silently relocate to a saddle.
            raise NoConvergence(
                f"gradient phase stalled at norm {gnorm:.3e} (gd={gd_iters})")

    # Levenberg-Marquardt polish of grad S = 0
    lm_iters = 0
    lam = 1e-6
    x = np.concatenate([loop.points.ravel(), [loop.tau]])
    gvec = grad.as_coordinates()
    while gnorm > opts.tol_crit and lm_iters < opts.max_lm:
        J = ev.jacobian(loop, segs)
        JtJ = J.T @ J
        rhs = -J.T @ gvec
        accepted = False
        for _ in range(25):
            M = JtJ + lam * (np.diag(np.diag(JtJ)) + 1e-12 * np.eye(JtJ.shape[0]))
            try:
                delta = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = x + delta
            tau_new = _clip_tau(x_new[-1], opts)
            cand = DiscreteLoop(points=model.torus.wrap(x_new[:-1].reshape(h, 2)),
                                tau=tau_new)
            try:
                guesses = {i: segs[i].nu_minus for i in range(h)}
                g_new, segs_new = ev.gradient_and_segments(cand, guesses)
            except SegmentFailure:
                lam *= 4
                continue
            if g_new.norm() < gnorm:
                loop, grad, segs = cand, g_new, segs_new
                gvec = grad.as_coordinates()
                gnorm = grad.norm()
                x = np.concatenate([loop.points.ravel(), [loop.tau]])
                lam = max(lam / 3, 1e-14)
                accepted = True
                break
            lam *= 4
        if not accepted:
            break
        lm_iters += 1

    if gnorm > opts.tol_crit:
        raise NoConvergence(
            f"descent stalled at gradient norm {gnorm:.3e} "
            f"(gd={gd_iters}, lm={lm_iters})")
    if loop.tau <= opts.tau_floor * (1 + 1e-9):
        raise PeriodCollapse("converged loop sits on the segment-time floor")
    return _finalize(model, k, loop, grad, ev, opts, gd_iters, lm_iters,
                     with_spectral)


# ---------------------------------------------------------------------------
# geometric post-checks


def _cross2(a, b) -> float:
    return float(a[0] * b[1] - a[1] * b[0])


def _segments_cross(p1, p2, p3, p4, eps: float) -> bool:
    """Proper intersection of open segments p1p2 and p3p4.

    Orientation areas below eps count as degenerate, not as crossings, so
    nearly-collinear numerical noise does not flag straight loops.
    """
    d1 = _cross2(p4 - p3, p1 - p3)
    d2 = _cross2(p4 - p3, p2 - p3)
    d3 = _cross2(p2 - p1, p3 - p1)
    d4 = _cross2(p2 - p1, p4 - p1)
    if min(abs(d1), abs(d2), abs(d3), abs(d4)) <= eps:
        return False
    return ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0))


def polygon_self_intersections(pts: np.ndarray) -> int:
    """Number of proper crossings among non-adjacent edges of a closed polygon."""
    n = pts.shape[0]
    extent = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    eps = 1e-9 * max(extent, 1.0) ** 2
    count = 0
    for i in range(n):
        a1, a2 = pts[i], pts[(i + 1) % n]
        for j in range(i + 2, n):
            if i == 0 and j == n - 1:
                continue  # adjacent around the wrap
            b1, b2 = pts[j], pts[(j + 1) % n]
            if _segments_cross(a1, a2, b1, b2, eps):
                count += 1
    return count


def hausdorff_distance(torus: TorusConfig, pts_a: np.ndarray, pts_b: np.ndarray) -> float:
    """Symmetric Hausdorff distance of two point sets in the torus metric."""
    da = np.empty((pts_a.shape[0], pts_b.shape[0]))
    for i, p in enumerate(pts_a):
        d = torus.wrap_centered(pts_b - p)
        da[i] = np.hypot(d[:, 0], d[:, 1])
    return float(max(da.min(axis=1).max(), da.min(axis=0).max()))


# ---------------------------------------------------------------------------
# seed families: analytically evaluated circles


@dataclass
class CircleSeed:
    center: np.ndarray
    radius: float
    orientation: int
    speed: float
    action: float

    def loop(self, torus: TorusConfig, h: int) -> DiscreteLoop:
        period = 2 * np.pi * self.radius / self.speed
        angles = self.orientation * 2 * np.pi * np.arange(h) / h
        pts = np.column_stack([self.center[0] + self.radius * np.cos(angles),
                               self.center[1] + self.radius * np.sin(angles)])
        return DiscreteLoop(points=torus.wrap(pts), tau=period / h)


@dataclass
class LineSeed:
    """Straight loop winding once around one torus axis at a fixed offset."""

    axis: int          # 0: winds in q1, offset is the q2 coordinate
    offset: float
    direction: int     # +1 or -1
    speed: float
    action: float

    def loop(self, torus: TorusConfig, h: int) -> DiscreteLoop:
        length = torus.sides[self.axis]
        ts = self.direction * length * np.arange(h) / h
        pts = np.empty((h, 2))
        pts[:, self.axis] = ts
        pts[:, 1 - self.axis] = self.offset
        period = length / self.speed
        return DiscreteLoop(points=torus.wrap(pts), tau=period / h)


def circle_action(model: LagrangianModel, k: float, center, radius: float,
                  orientation: int, speed: float, n_quad: int = 64) -> float:
    """Free-period action of a constant-speed circle, by quadrature."""
    th = 2 * np.pi * np.arange(n_quad) / n_quad
    total = 0.0
    for t in th:
        q = np.array([center[0] + radius * np.cos(orientation * t),
                      center[1] + radius * np.sin(orientation * t)])
        tang = orientation * np.array([-np.sin(orientation * t),
                                       np.cos(orientation * t)])
        total += model.L(model.torus.wrap(q), speed * tang) + k
    dt = (2 * np.pi * radius / speed) / n_quad
    return total * dt


def circle_seed_family(model: LagrangianModel, k: float, *, n_centers: int = 5,
                       n_radii: int = 8, n_speeds: int = 12,
                       r_min: float | None = None, r_max: float | None = None):
    """Evaluate a family of circles analytically; sorted by action."""
    torus = model.torus
    smin = min(torus.side_lengths)
    r_min = r_min if r_min is not None else 0.02 * smin
    r_max = r_max if r_max is not None else 0.45 * smin
    radii = np.geomspace(r_min, r_max, n_radii)
    seeds = []
    for cx in np.linspace(0, torus.sides[0], n_centers, endpoint=False):
        for cy in np.linspace(0, torus.sides[1], n_centers, endpoint=False):
            center = np.array([cx, cy])
            v_ref = np.sqrt(max(2.0 * k, 1e-8))
            speeds = np.geomspace(0.3 * v_ref + 1e-6, 4.0 * v_ref + 1e-6, n_speeds)
            for r in radii:
                for orient in (+1, -1):
                    best = None
                    for s in speeds:
                        a = circle_action(model, k, center, r, orient, s)
                        if best is None or a < best[1]:
                            best = (s, a)
                    seeds.append(CircleSeed(center=center, radius=r,
                                            orientation=orient, speed=best[0],
                                            action=best[1]))
    seeds.sort(key=lambda c: c.action)
    return seeds


def line_action(model: LagrangianModel, k: float, axis: int, offset: float,
                direction: int, speed: float, n_quad: int = 64) -> float:
    """Free-period action of a constant-speed straight winding loop."""
    torus = model.torus
    length = torus.sides[axis]
    tang = np.zeros(2)
    tang[axis] = direction
    total = 0.0
    for s in np.arange(n_quad) * length / n_quad:
        q = np.empty(2)
        q[axis] = direction * s
        q[1 - axis] = offset
        total += model.L(torus.wrap(q), speed * tang) + k
    return total * (length / speed) / n_quad


def line_seed_family(model: LagrangianModel, k: float, *, n_offsets: int = 16,
                     n_speeds: int = 12):
    """Straight winding loops around both axes, all offsets and directions."""
    torus = model.torus
    v_ref = np.sqrt(max(2.0 * k, 1e-8))
    speeds = np.geomspace(0.3 * v_ref + 1e-6, 4.0 * v_ref + 1e-6, n_speeds)
    seeds = []
    for axis in (0, 1):
        for offset in np.linspace(0, torus.sides[1 - axis], n_offsets,
                                  endpoint=False):
            for direction in (+1, -1):
                best = None
                for s in speeds:
                    a = line_action(model, k, axis, offset, direction, s)
                    if best is None or a < best[1]:
                        best = (s, a)
                seeds.append(LineSeed(axis=axis, offset=float(offset),
                                      direction=direction, speed=best[0],
                                      action=best[1]))
    seeds.sort(key=lambda c: c.action)
    return seeds


def seed_family(model: LagrangianModel, k: float):
    """Circles plus winding lines, analytically scored and sorted."""
    seeds = circle_seed_family(model, k) + line_seed_family(model, k)
    seeds.sort(key=lambda c: c.action)
    return seeds


def find_local_minimizer(model: LagrangianModel, k: float, *, h: int = 20,
                         n_descents: int = 8, opts: DescentOptions | None = None,
                         seeds=None) -> OrbitRecord:
    """Multi-start descent from negative-action seed loops.

    Seeds are analytically scored circles and straight winding loops; only
    negative ones are descended (models without negative-action loops fail
    fast), deepest first.  A returned record has action < 0, vanishing
    index, and no polygonal self-intersections; otherwise
    MinimizerNotFound is raised.
    """
    opts = opts or DescentOptions()
    seeds = seeds if seeds is not None else seed_family(model, k)
    negative = [s for s in seeds if s.action < 0]
    if not negative:
        raise MinimizerNotFound(
            f"no negative-action seed at k={k}; best {seeds[0].action:.4f}")
    best_record = None
    errors = []
    for seed in negative[:n_descents]:
        try:
            rec = descend(model, k, seed.loop(model.torus, h), opts=opts)
        except BrokenOrbitsError as exc:
            errors.append(str(exc))
            continue
        if (rec.action < 0 and rec.is_local_min and rec.energy_dev <= 1e-6
                and rec.simple):
            if best_record is None or rec.action < best_record.action:
                best_record = rec
    if best_record is None:
        raise MinimizerNotFound(
            f"{len(negative[:n_descents])} descents produced no valid minimizer; "
            f"errors: {errors[:3]}")
    return best_record


# ---------------------------------------------------------------------------
# mountain-pass minimax via a string method


@dataclass
class MinimaxResult:
    n: int
    value: float
    path: list[DiscreteLoop]
    near_critical: OrbitRecord | None
    endpoint_actions: tuple[float, float]
    sweeps: int
    max_index: int


def _loop_to_coords(loop: DiscreteLoop, torus: TorusConfig) -> np.ndarray:
    return np.concatenate([loop.unwrapped_points(torus).ravel(), [loop.tau]])


def _coords_to_loop(x: np.ndarray, torus: TorusConfig) -> DiscreteLoop:
    return DiscreteLoop(points=torus.wrap(x[:-1].reshape(-1, 2)), tau=x[-1])


def _align_lift(x_from: np.ndarray, x_to: np.ndarray, torus: TorusConfig) -> np.ndarray:
    """Shift the lift of x_to so each point is the image nearest to x_from."""
    out = x_to.copy()
    pa = x_from[:-1].reshape(-1, 2)
    pb = out[:-1].reshape(-1, 2)
    pb[:] = pa + torus.wrap_centered(pb - pa)
    return out


def _initial_path(x0: np.ndarray, x1: np.ndarray, n_nodes: int,
                  torus: TorusConfig) -> list[np.ndarray]:
    """V-shaped starting string: shrink x0 to its centroid, slide, grow x1.

    Every intermediate loop is a scaled copy of a valid endpoint loop or a
    near-point loop, so all initial nodes are shootable; direct linear
    interpolation between unrelated loop shapes generally is not.
    """
    p0 = x0[:-1].reshape(-1, 2)
    p1 = x1[:-1].reshape(-1, 2)
    c0 = p0.mean(axis=0)
    c1 = c0 + torus.wrap_centered(p1.mean(axis=0) - c0)
    fracs = np.linspace(0.0, 1.0, n_nodes)
    taus = (1 - fracs) * x0[-1] + fracs * x1[-1]
    nodes = []
    for f, tau in zip(fracs, taus):
        center = c0 + f * (c1 - c0)
        s0 = max(0.0, 1.0 - 2.0 * f)
        s1 = max(0.0, 2.0 * f - 1.0)
        pts = center + s0 * (p0 - c0) + s1 * (p1 - c1)
        nodes.append(np.concatenate([pts.ravel(), [tau]]))
    nodes[0] = x0.copy()
    nodes[-1] = x1.copy()
    return nodes


def default_anchor(model: LagrangianModel, k: float,
                   minimizer: OrbitRecord) -> DiscreteLoop:
    """Double cover of the minimizer resampled back to its own node count.

    Same homotopy class (contractible minimizers only), roughly twice the
    negative action: the canonical below-the-minimizer path endpoint.
    """
    if minimizer.winding != (0, 0):
        raise ValueError(
            "default anchor construction needs a contractible minimizer; "
            "pass an explicit anchor loop in the same homotopy class")
    from .action import resample_loop

    return resample_loop(model, k, iterate(minimizer.loop, 2), minimizer.loop.h)


def minimax(model: LagrangianModel, k: float, n: int, anchor: DiscreteLoop | None,
            minimizer: OrbitRecord, *, n_nodes: int = 24, max_sweeps: int = 300,
            value_tol: float = 1e-7, opts: DescentOptions | None = None,
            refine: bool = True, verbose: bool = False) -> MinimaxResult:
    """Mountain-pass estimate between n-th iterates of anchor and minimizer.

    A string of loops joins the two iterated endpoints; interior nodes
    take descent steps orthogonal to the path tangent and the string is
    rearclength-reparametrized each sweep.  The converged maximum node is
    the minimax value; the node is then polished to a nearby critical
    point.  Endpoints never move.
    """
    if n < 1:
        raise ValueError("iterate count n must be >= 1")
    opts = opts or DescentOptions()
    torus = model.torus
    if anchor is None:
        anchor = default_anchor(model, k, minimizer)
    if anchor.h != minimizer.loop.h:
        raise ValueError("anchor and minimizer loops must share the same h")
    lo = iterate(anchor, n)
    hi = iterate(minimizer.loop, n)
    hh = lo.h
    ev = LoopEvaluator(model, k)
    S_lo = ev.action(lo)
    S_hi = ev.action(hi)

    x0 = _loop_to_coords(lo, torus)
    x1 = _align_lift(x0, _loop_to_coords(hi, torus), torus)
    nodes = _initial_path(x0, x1, n_nodes, torus)

    def metric_inner(u, v):
        return float(u[:-1] @ v[:-1] + hh * u[-1] * v[-1])

    def node_eval(x):
        loop = _coords_to_loop(x, torus)
        g, segs = ev.gradient_and_segments(loop)
        S = loop.h * loop.tau * k + sum(s.action for s in segs)
        return S, g

    actions = np.empty(n_nodes)
    grads: list[GradientVector | None] = [None] * n_nodes
    for j in range(n_nodes):
        actions[j], grads[j] = node_eval(nodes[j])

    def try_refine(m_idx):
        """Polish the max node to a critical point; accept genuine passes only."""
        crit_opts = DescentOptions(**{**opts.__dict__, "mode": "critical"})
        try:
            cand = descend(model, k, _coords_to_loop(nodes[m_idx], torus),
                           opts=crit_opts)
        except BrokenOrbitsError:
            return None
        if cand.spectral is None or cand.spectral.ind_H < 1:
            return None  # fell into a minimum, not a pass
        if abs(cand.action - actions[m_idx]) > 0.25 * (1.0 + abs(actions[m_idx])):
            return None  # landed far from the node it started from
        if cand.action < max(S_lo, S_hi) - 1e-9:
            return None  # below the endpoints: not the separating level
        return cand

    alpha = np.full(n_nodes, 0.05)
    prev_max = np.inf
    stable = 0
    sweeps = 0
    warmup = max(12, n_nodes)
    near = None
    m_idx = int(np.argmax(actions))
    for sweeps in range(1, max_sweeps + 1):
        for j in range(1, n_nodes - 1):
            alpha[j] = max(alpha[j], 1e-8)
            tangent = nodes[j + 1] - nodes[j - 1]
            tn = metric_inner(tangent, tangent) ** 0.5
            if tn == 0.0:
                continue
            tangent /= tn
            g = grads[j].as_coordinates()
            g[-1] = grads[j].mu  # metric gradient: tau component is mu
            step_dir = g - metric_inner(g, tangent) * tangent
            # one backtracking step per node per sweep
            while alpha[j] > 1e-13:
                x_new = nodes[j] - alpha[j] * step_dir
                x_new[-1] = np.clip(x_new[-1], opts.tau_floor, opts.tau_cap)
                try:
                    S_new, g_new = node_eval(x_new)
                except SegmentFailure:
                    alpha[j] *= 0.5
                    continue
                if S_new <= actions[j] + 1e-14 * (1 + abs(actions[j])):
                    nodes[j] = x_new
                    actions[j] = S_new
                    grads[j] = g_new
                    alpha[j] = min(alpha[j] * 1.3, 0.5)
                else:
                    alpha[j] *= 0.5
                break

        # reparametrize, concentrating nodes where the action is high
        seg_len = np.array([metric_inner(nodes[j + 1] - nodes[j],
                                         nodes[j + 1] - nodes[j]) ** 0.5
                            for j in range(n_nodes - 1)])
        span = actions.max() - actions.min()
        if span > 0:
            level = 0.5 * (actions[:-1] + actions[1:])
            weight = 1.0 + 6.0 * (level - actions.min()) / span
        else:
            weight = np.ones(n_nodes - 1)
        wlen = seg_len * weight
        cum = np.concatenate([[0.0], np.cumsum(wlen)])
        if cum[-1] > 0:
            old = [x.copy() for x in nodes]
            targets = np.linspace(0.0, cum[-1], n_nodes)
            for jj, f in enumerate(targets[1:-1], start=1):
                idx = int(np.searchsorted(cum, f, side="right") - 1)
                idx = min(idx, n_nodes - 2)
                w = (f - cum[idx]) / max(wlen[idx], 1e-300)
                cand = old[idx] + w * (old[idx + 1] - old[idx])
                try:
                    S_new, g_new = node_eval(cand)
                except SegmentFailure:
                    continue  # keep the previous node at this slot
                nodes[jj] = cand
                actions[jj], grads[jj] = S_new, g_new

        m_idx = int(np.argmax(actions))
        c_est = float(actions[m_idx])
        if verbose and sweeps % 10 == 0:
            print(f"  sweep {sweeps}: max={c_est:.6f} idx={m_idx} "
                  f"gmax={grads[m_idx].norm():.2e} stable={stable}")

        # after warmup, periodically try to pin the pass by refinement
        if refine and 0 < m_idx < n_nodes - 1 and sweeps >= warmup \
                and (sweeps - warmup) % 10 == 0:
            near = try_refine(m_idx)
            if near is not None:
                x_saddle = _align_lift(nodes[m_idx],
                                       _loop_to_coords(near.loop, torus), torus)
                nodes[m_idx] = x_saddle
                actions[m_idx] = near.action
                grads[m_idx] = node_eval(x_saddle)[1]
                break

        if abs(c_est - prev_max) <= value_tol * (1.0 + abs(c_est)):
            stable += 1
            if stable >= 8:
                break
        else:
            stable = 0
        prev_max = c_est
        if ev.cache_size > 200_000:
            ev.clear_cache()
    else:
        if near is None:
            raise PathBudgetExceeded(
                f"string did not stabilize in {max_sweeps} sweeps")

    m_idx = int(np.argmax(actions))
    if refine and near is None and 0 < m_idx < n_nodes - 1:
        near = try_refine(m_idx)
    value = float(actions[m_idx])
    path_loops = [_coords_to_loop(x, torus) for x in nodes]
    return MinimaxResult(n=n, value=value, path=path_loops, near_critical=near,
                         endpoint_actions=(S_lo, S_hi), sweeps=sweeps,
                         max_index=m_idx)


# ---------------------------------------------------------------------------
# multiplicity scan


@dataclass
class ScanResult:
    records: list[OrbitRecord]
    minimax_values: list[float]
    dedup_hausdorff: float
    dedup_period_rel: float


def _same_orbit(torus: TorusConfig, a: OrbitRecord, b: OrbitRecord,
                tol_hd: float, tol_period: float) -> bool:
    """Identical orbits or iterates of one another."""
    pa, pb = a.period, b.period
    ratio = max(pa, pb) / min(pa, pb)
    if abs(ratio - round(ratio)) > tol_period * ratio:
        return False
    return hausdorff_distance(torus, a.loop.points, b.loop.points) < tol_hd


def _minimax_task(args):
    """Module-level worker so scans parallelize across processes."""
    model, k, n, anchor, minimizer, n_nodes, max_sweeps, opts = args
    return minimax(model, k, n, anchor, minimizer, n_nodes=n_nodes,
                   max_sweeps=max_sweeps, opts=opts)


def worker_count() -> int:
    """Worker pool size; BROKENORBITS_WORKERS pins it, default serial."""
    import os

    try:
        return max(1, int(os.environ.get("BROKENORBITS_WORKERS", "1")))
    except ValueError:
        return 1


def multiplicity_scan(model: LagrangianModel, k: float, n_max: int, *,
                      h: int = 20, opts: DescentOptions | None = None,
                      minimizer: OrbitRecord | None = None,
                      anchor: DiscreteLoop | None = None,
                      n_nodes: int = 24, max_sweeps: int = 300,
                      workers: int | None = None) -> ScanResult:
    """Minimax over n = 1..n_max, descending each pass node; dedup records.

    The default anchor is the minimizer's double cover resampled back to h
    nodes: it sits in the same homotopy class with twice the (negative)
    action, which is what the iterated minimax construction needs.
    Independent iterate runs fan out over a process pool when workers > 1
    (results are aggregated in iterate order, so the output is
    deterministic either way).  Returns the geometrically distinct
    negative-action orbits found (including the starting minimizer) and
    the minimax value sequence.
    """
    opts = opts or DescentOptions()
    torus = model.torus
    if minimizer is None:
        minimizer = find_local_minimizer(model, k, h=h, opts=opts)
    h = minimizer.loop.h

    if anchor is None:
        anchor = default_anchor(model, k, minimizer)
    S_anchor = LoopEvaluator(model, k).action(anchor)
    if S_anchor >= minimizer.action:
        raise MinimizerNotFound(
            f"anchor action {S_anchor:.4f} not below minimizer "
            f"action {minimizer.action:.4f}")

    workers = workers if workers is not None else worker_count()
    tasks = [(model, k, n, anchor, minimizer, n_nodes, max_sweeps, opts)
             for n in range(1, n_max + 1)]
    if workers > 1 and len(tasks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_minimax_task, tasks))
    else:
        results = [_minimax_task(t) for t in tasks]

    tol_hd = 1e-3 * torus.diameter
    tol_period = 1e-4
    records = [minimizer]
    values = []
    for res in results:
        values.append(res.value)
        rec = res.near_critical
        if rec is None:
            continue
        if not (rec.action < 0 and rec.energy_dev <= 1e-6):
            continue
        if any(_same_orbit(torus, rec, old, tol_hd, tol_period) for old in records):
            continue
        records.append(rec)
    records.sort(key=lambda r: r.action)
    return ScanResult(records=records, minimax_values=values,
                      dedup_hausdorff=tol_hd, dedup_period_rel=tol_period)


# ---------------------------------------------------------------------------
# a-priori bounds (period and length of negative-action orbits)


def magnetic_curl_integral(model: LagrangianModel, n_grid: int = 256) -> float:
    """Integral over the torus of |curl of the rest-velocity 1-form|.

    The 1-form is v -> L_v(q, 0) v; on our model families its exterior
    derivative is evaluated exactly from the mixed second derivatives.
    """
    torus = model.torus
    xs = np.linspace(0, torus.sides[0], n_grid, endpoint=False)
    ys = np.linspace(0, torus.sides[1], n_grid, endpoint=False)
    total = 0.0
    zero = np.zeros(2)
    for x in xs:
        for y in ys:
            L_qv = model.L_qv(np.array([x, y]), zero)
            total += abs(L_qv[0, 1] - L_qv[1, 0])
    cell = (torus.sides[0] / n_grid) * (torus.sides[1] / n_grid)
    return total * cell


def period_bound(model: LagrangianModel, k: float, action_value: float, *,
                 e0_value: float | None = None, n_grid: int = 256) -> float:
    """Upper bound for the total period of loops with the given action."""
    from .mane import e0 as compute_e0

    e0_value = e0_value if e0_value is not None else compute_e0(model)
    if k <= e0_value:
        raise ValueError(f"period bound needs k > e0 = {e0_value}")
    return (action_value + magnetic_curl_integral(model, n_grid)) / (k - e0_value)


def length_bound(model: LagrangianModel, k: float, action_value: float, *,
                 e0_value: float | None = None, n_grid: int = 256) -> float:
    """Period bound times the maximal speed on the energy level."""
    from .models import max_speed_on_level

    return (period_bound(model, k, action_value, e0_value=e0_value, n_grid=n_grid)
            * max_speed_on_level(model, k))


def loop_length(torus: TorusConfig, loop: DiscreteLoop) -> float:
    pts = loop.points
    return sum(torus.distance(pts[i], pts[(i + 1) % loop.h]) for i in range(loop.h))
