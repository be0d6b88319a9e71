"""Decision-making as compositional sampling on a point-mass maze.

A trajectory is scored by three energy factors that multiply as densities:
the Markov dynamics factor (sum of per-step quadratic transition residuals
of a double integrator), a start/goal factor, and a smooth wall-penetration
penalty.  Planning samples the product with annealed Langevin steps plus a
final quench, so success statistics are deterministic given the seed.

Object arrangement follows the same recipe on constraint graphs: decision
variables are disk poses, conditioning variables their radii, constraints
squared hinges (pairwise non-overlap, box containment).
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .compose import product_energy
from .energies import CallableEnergy, EnergyFunction, _as_batch
from .errors import ConfigError, DimensionMismatchError
from .samplers import chain_rng

__all__ = [
    "MazeEnv",
    "Trajectory",
    "GoalFactor",
    "markov_traj_energy",
    "goal_energy",
    "wall_energy",
    "plan_energy",
    "plan",
    "ConstraintGraph",
    "DiskNonOverlap",
    "BoxContainment",
    "constraint_energy",
    "constraint_residuals",
    "arrange",
    "maze_to_json",
    "maze_from_json",
    "trajectory_to_csv",
    "trajectory_from_csv",
    "umaze",
    "empty_maze",
]

def _wall_boxes(grid, cell):
    """Maximal horizontal and vertical runs of wall cells as rectangles.

    Every interior point of the wall union lies strictly inside at least one
    run, so the max box depth over runs is an exact penetration depth: zero
    everywhere in free space and positive inside walls (no cracks along the
    faces shared by adjacent wall cells).
    """
    boxes = []
    rows, cols = grid.shape
    for r in range(rows):
        c = 0
        while c < cols:
            if grid[r, c]:
                c0 = c
                while c < cols and grid[r, c]:
                    c += 1
                boxes.append((c0, r, c, r + 1))
            else:
                c += 1
    for c in range(cols):
        r = 0
        while r < rows:
            if grid[r, c]:
                r0 = r
                while r < rows and grid[r, c]:
                    r += 1
                boxes.append((c, r0, c + 1, r))
            else:
                r += 1
    return np.asarray(boxes, dtype=float) * cell  # columns: x0, y0, x1, y1


class MazeEnv:
    """Wall grid over a rectangle with double-integrator point dynamics.

    ``grid[row][col]`` is truthy for wall cells, row 0 at the bottom; world
    coordinates are (x, y) = (col, row) * cell.  State s = (px, py, vx, vy),
    action a = (fx, fy) with |f| clamped to force_max per axis; the step is
    p' = p + dt v, v' = v + dt a.
    """

    def __init__(self, grid, cell=1.0, dt=0.15, force_max=2.0, dyn_sigma=0.05):
        grid = np.asarray(grid, dtype=bool)
        if grid.ndim != 2:
            raise ConfigError("maze grid must be 2-D")
        self.grid = grid
        self.cell = float(cell)
        self.dt = float(dt)
        self.force_max = float(force_max)
        self.dyn_sigma = float(dyn_sigma)
        self.rows, self.cols = grid.shape
        self.x_max = self.cols * self.cell
        self.y_max = self.rows * self.cell
        self._boxes = _wall_boxes(grid, self.cell)

    def wall_at(self, pos):
        pos = np.atleast_2d(np.asarray(pos, dtype=float))
        col = np.clip((pos[:, 0] / self.cell).astype(int), 0, self.cols - 1)
        row = np.clip((pos[:, 1] / self.cell).astype(int), 0, self.rows - 1)
        out = (
            (pos[:, 0] < 0) | (pos[:, 0] >= self.x_max)
            | (pos[:, 1] < 0) | (pos[:, 1] >= self.y_max)
        )
        return self.grid[row, col] | out

    def _box_depths(self, p):
        # (N, B) depth of each point inside each wall box (0 when outside)
        if len(self._boxes) == 0:
            return np.zeros((p.shape[0], 1))
        x0, y0, x1, y1 = self._boxes.T
        m = p[:, 0:1] - x0[None, :]
        np.minimum(m, x1[None, :] - p[:, 0:1], out=m)
        np.minimum(m, p[:, 1:2] - y0[None, :], out=m)
        np.minimum(m, y1[None, :] - p[:, 1:2], out=m)
        return np.maximum(m, 0.0, out=m)

    def penetration(self, pos):
        """Exact depth inside walls (0 in free space) plus distance outside bounds."""
        pos = np.asarray(pos, dtype=float)
        squeeze = pos.ndim == 1
        p = np.atleast_2d(pos)
        clamped = np.clip(p, 0.0, [self.x_max, self.y_max])
        outside = np.linalg.norm(p - clamped, axis=-1)
        depth = self._box_depths(clamped).max(axis=1)
        out = depth + outside
        return float(out[0]) if squeeze else out

    def penetration_grad(self, pos):
        pos = np.asarray(pos, dtype=float)
        squeeze = pos.ndim == 1
        p = np.atleast_2d(pos)
        clamped = np.clip(p, 0.0, [self.x_max, self.y_max])
        delta = p - clamped
        norm = np.linalg.norm(delta, axis=-1, keepdims=True)
        g = np.where(norm > 0, delta / np.maximum(norm, 1e-300), 0.0)
        depths = self._box_depths(clamped)
        best = depths.argmax(axis=1)
        inside = depths[np.arange(len(p)), best] > 0
        if np.any(inside) and len(self._boxes):
            idx = np.flatnonzero(inside)
            bx = self._boxes[best[idx]]
            pts = clamped[idx]
            faces = np.stack(
                [
                    pts[:, 0] - bx[:, 0],
                    bx[:, 2] - pts[:, 0],
                    pts[:, 1] - bx[:, 1],
                    bx[:, 3] - pts[:, 1],
                ],
                axis=1,
            )
            which = faces.argmin(axis=1)
            dirs = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
            g[idx] += dirs[which]
        return g[0] if squeeze else g

    def step(self, s, a):
        a = np.clip(np.asarray(a, dtype=float), -self.force_max, self.force_max)
        s = np.asarray(s, dtype=float)
        out = s.copy()
        out[..., 0:2] = s[..., 0:2] + self.dt * s[..., 2:4]
        out[..., 2:4] = s[..., 2:4] + self.dt * a
        return out

    def rollout(self, s0, actions):
        states = [np.asarray(s0, dtype=float)]
        for a in actions:
            states.append(self.step(states[-1], a))
        return Trajectory(states=np.stack(states), actions=np.asarray(actions, dtype=float))


@dataclass
class Trajectory:
    """states (T+1, 4) and actions (T, 2); flattens to one sampling vector."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 4:
            raise ConfigError("states must be (T+1, 4)")
        if self.actions.ndim != 2 or self.actions.shape[1] != 2:
            raise ConfigError("actions must be (T, 2)")
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise DimensionMismatchError("need exactly one more state than actions")
        if not (np.all(np.isfinite(self.states)) and np.all(np.isfinite(self.actions))):
            raise ConfigError("trajectory has non-finite entries")

    @property
    def horizon(self):
        return self.actions.shape[0]

    def flat(self):
        return np.concatenate([self.states.reshape(-1), self.actions.reshape(-1)])

    @staticmethod
    def from_flat(x, horizon):
        x = np.asarray(x, dtype=float)
        ns = 4 * (horizon + 1)
        return Trajectory(
            states=x[:ns].reshape(horizon + 1, 4),
            actions=x[ns:].reshape(horizon, 2),
        )

    @staticmethod
    def flat_dim(horizon):
        return 4 * (horizon + 1) + 2 * horizon


@dataclass(frozen=True)
class GoalFactor:
    """Start/goal endpoint factor with quadratic pull of the given stiffness."""

    start: np.ndarray
    goal: np.ndarray
    stiffness: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "goal", np.asarray(self.goal, dtype=float))
        if self.stiffness <= 0:
            raise ConfigError("stiffness must be positive")


def _split(xb, horizon):
    n = xb.shape[0]
    ns = 4 * (horizon + 1)
    states = xb[:, :ns].reshape(n, horizon + 1, 4)
    actions = xb[:, ns:].reshape(n, horizon, 2)
    return states, actions


class MarkovTrajEnergy(EnergyFunction):
    """Sum of per-step Gaussian transition residuals of the double integrator."""

    def __init__(self, env, horizon):
        self.env = env
        self.horizon = int(horizon)
        self.dim = Trajectory.flat_dim(horizon)
        self._inv2s2 = 1.0 / (2.0 * env.dyn_sigma**2)

    def _residuals(self, states, actions):
        dt = self.env.dt
        pred = states[:, :-1].copy()
        pred[:, :, 0:2] += dt * states[:, :-1, 2:4]
        pred[:, :, 2:4] += dt * actions
        return states[:, 1:] - pred

    def energy(self, x):
        xb, single = _as_batch(x, self.dim)
        states, actions = _split(xb, self.horizon)
        r = self._residuals(states, actions)
        e = np.sum(r * r, axis=(1, 2)) * self._inv2s2
        return float(e[0]) if single else e

    def grad(self, x):
        xb, single = _as_batch(x, self.dim)
        states, actions = _split(xb, self.horizon)
        r = self._residuals(states, actions) / self.env.dyn_sigma**2
        dt = self.env.dt
        gs = np.zeros_like(states)
        gs[:, 1:] += r
        # minus A^T r_{i+1} on state i: A^T (yp, yv) = (yp, dt yp + yv)
        gs[:, :-1, 0:2] -= r[:, :, 0:2]
        gs[:, :-1, 2:4] -= dt * r[:, :, 0:2] + r[:, :, 2:4]
        ga = -dt * r[:, :, 2:4]
        g = np.concatenate([gs.reshape(xb.shape[0], -1), ga.reshape(xb.shape[0], -1)], axis=1)
        return g[0] if single else g


class GoalEnergy(EnergyFunction):
    def __init__(self, factor, horizon):
        self.factor = factor
        self.horizon = int(horizon)
        self.dim = Trajectory.flat_dim(horizon)

    def energy(self, x):
        xb, single = _as_batch(x, self.dim)
        states, _ = _split(xb, self.horizon)
        k = self.factor.stiffness
        e = k * (
            np.sum((states[:, 0, 0:2] - self.factor.start) ** 2, axis=1)
            + np.sum((states[:, -1, 0:2] - self.factor.goal) ** 2, axis=1)
        )
        return float(e[0]) if single else e

    def grad(self, x):
        xb, single = _as_batch(x, self.dim)
        states, _ = _split(xb, self.horizon)
        k = self.factor.stiffness
        gs = np.zeros_like(states)
        gs[:, 0, 0:2] = 2 * k * (states[:, 0, 0:2] - self.factor.start)
        gs[:, -1, 0:2] += 2 * k * (states[:, -1, 0:2] - self.factor.goal)
        g = np.concatenate(
            [gs.reshape(xb.shape[0], -1), np.zeros((xb.shape[0], 2 * self.horizon))], axis=1
        )
        return g[0] if single else g


class WallEnergy(EnergyFunction):
    """Squared wall penetration over trajectory positions and segment midpoints.

    Midpoints stop a chain from straddling a thin wall with two nearby
    states whose connecting segment cuts straight through it.
    """

    def __init__(self, env, horizon, weight=50.0):
        self.env = env
        self.horizon = int(horizon)
        self.weight = float(weight)
        self.dim = Trajectory.flat_dim(horizon)

    def _points(self, states):
        pos = states[:, :, 0:2]
        mid = 0.5 * (pos[:, :-1] + pos[:, 1:])
        return pos, mid, np.concatenate([pos.reshape(-1, 2), mid.reshape(-1, 2)])

    def energy(self, x):
        xb, single = _as_batch(x, self.dim)
        states, _ = _split(xb, self.horizon)
        pos, mid, pts = self._points(states)
        d = self.env.penetration(pts)
        n_pos = pos.shape[0] * pos.shape[1]
        e = self.weight * (
            np.sum(d[:n_pos].reshape(pos.shape[:2]) ** 2, axis=1)
            + np.sum(d[n_pos:].reshape(mid.shape[:2]) ** 2, axis=1)
        )
        return float(e[0]) if single else e

    def grad(self, x):
        xb, single = _as_batch(x, self.dim)
        states, _ = _split(xb, self.horizon)
        pos, mid, pts = self._points(states)
        d = self.env.penetration(pts)
        gd = (2.0 * self.weight * d)[:, None] * self.env.penetration_grad(pts)
        n_pos = pos.shape[0] * pos.shape[1]
        gs = np.zeros_like(states)
        gs[:, :, 0:2] += gd[:n_pos].reshape(pos.shape)
        gm = gd[n_pos:].reshape(mid.shape)
        gs[:, :-1, 0:2] += 0.5 * gm
        gs[:, 1:, 0:2] += 0.5 * gm
        g = np.concatenate(
            [gs.reshape(xb.shape[0], -1), np.zeros((xb.shape[0], 2 * self.horizon))], axis=1
        )
        return g[0] if single else g


def markov_traj_energy(env, traj):
    """Dynamics-residual energy of one trajectory (0 for exact rollouts)."""
    return MarkovTrajEnergy(env, traj.horizon).energy(traj.flat())


def goal_energy(factor, traj):
    return GoalEnergy(factor, traj.horizon).energy(traj.flat())


def wall_energy(env, traj, weight=50.0):
    return WallEnergy(env, traj.horizon, weight).energy(traj.flat())


def plan_energy(env, factor, horizon, wall_weight=50.0):
    """The planning target as an explicit product of its three factors."""
    return product_energy(
        [
            (MarkovTrajEnergy(env, horizon), 1.0),
            (GoalEnergy(factor, horizon), 1.0),
            (WallEnergy(env, horizon, wall_weight), 1.0),
        ]
    )


@dataclass
class PlanResult:
    trajectories: list
    success: np.ndarray
    stats: dict


def _anneal_batch(energy, x0, gens, n_levels, steps_per_level, base_step, temp_hi, quench_steps):
    """Annealed ULA over a geometric temperature ladder, then a quench.

    ``x0`` is (n_chains, dim) with one generator per chain; noise is drawn
    per chain per level so chain i never depends on how the batch is split.
    The drift uses the un-tempered gradient with noise scaled by temperature
    (equivalently ULA on E/T with step base*T), and the quench is plain
    gradient descent polishing each sample inside its basin.
    """
    x = x0.copy()
    n, dim = x.shape
    alive = np.ones(n, dtype=bool)
    temps = np.geomspace(temp_hi, 1.0, n_levels)
    for temp in temps:
        eta = base_step * temp
        c = np.sqrt(2.0 * eta)
        noise = np.stack([g.standard_normal((steps_per_level, dim)) for g in gens])
        for k in range(steps_per_level):
            g = energy.grad(x)
            x_new = x - base_step * g + c * noise[:, k, :]
            ok = np.all(np.isfinite(x_new), axis=1)
            alive &= ok
            x = np.where((ok & alive)[:, None], x_new, x)
    for _ in range(quench_steps):
        g = energy.grad(x)
        x_new = x - base_step * g
        ok = np.all(np.isfinite(x_new), axis=1)
        alive &= ok
        x = np.where((ok & alive)[:, None], x_new, x)
    return x, alive


def _free_cell_centers(env):
    rows, cols = np.nonzero(~env.grid)
    return (np.stack([cols, rows], axis=1) + 0.5) * env.cell


def plan(env, factor, cfg, n, horizon=64, wall_weight=50.0, eps_goal=0.3,
         n_levels=40, quench_steps=1500, temp_hi=30.0, restarts=4):
    """Sample n trajectories from the composed planning distribution.

    Each run anneals ``restarts`` chains initialized through random free-cell
    waypoints (so chains spread over distinct path topologies) and keeps the
    lowest-energy sample.  Success means the final position lands within
    ``eps_goal`` of the goal with zero wall penetration along the path.
    Chains are seeded from (cfg.seed, run * restarts + j).
    """
    start = np.asarray(factor.start, dtype=float)
    goal = np.asarray(factor.goal, dtype=float)
    if env.wall_at(start)[0] or env.wall_at(goal)[0]:
        raise ConfigError("start or goal lies inside a wall")
    energy = plan_energy(env, factor, horizon, wall_weight)
    centers = _free_cell_centers(env)
    n_chains = n * restarts
    gens = [chain_rng(cfg.seed, i) for i in range(n_chains)]
    x0 = np.empty((n_chains, energy.dim))
    half = horizon // 2
    for i, rng in enumerate(gens):
        wp = centers[rng.integers(len(centers))] + 0.2 * rng.standard_normal(2)
        pos = np.concatenate(
            [
                start + np.linspace(0.0, 1.0, half + 1)[:, None] * (wp - start),
                wp + np.linspace(0.0, 1.0, horizon - half + 1)[1:, None] * (goal - wp),
            ]
        )
        vel = np.gradient(pos, env.dt, axis=0)
        states = np.concatenate([pos, vel], axis=1)
        states[:, 0:2] += 0.1 * rng.standard_normal((horizon + 1, 2))
        states[:, 2:4] += 0.1 * rng.standard_normal((horizon + 1, 2))
        actions = 0.1 * rng.standard_normal((horizon, 2))
        x0[i] = np.concatenate([states.reshape(-1), actions.reshape(-1)])
    x, alive = _anneal_batch(
        energy, x0, gens, n_levels, cfg.steps_per_level, cfg.step_size, temp_hi, quench_steps
    )
    final_e = energy.energy(x)
    final_e = np.where(alive, final_e, np.inf)
    trajs = []
    success = np.zeros(n, dtype=bool)
    for run in range(n):
        block = slice(run * restarts, (run + 1) * restarts)
        best = run * restarts + int(np.argmin(final_e[block]))
        traj = Trajectory.from_flat(x[best], horizon)
        trajs.append(traj)
        if np.isfinite(final_e[best]):
            pen = env.penetration(traj.states[:, 0:2])
            hit = np.linalg.norm(traj.states[-1, 0:2] - goal) <= eps_goal
            success[run] = hit and np.all(pen == 0.0)
    stats = {
        "n": int(n),
        "success_rate": float(success.mean()),
        "horizon": int(horizon),
        "eps_goal": float(eps_goal),
        "restarts": int(restarts),
    }
    return PlanResult(trajectories=trajs, success=success, stats=stats)


# --- constraint graphs


class DiskNonOverlap:
    """Squared hinge on center distance vs radius sum for one disk pair."""

    def __init__(self, a, b, weight=1.0):
        self.a = a
        self.b = b
        self.weight = float(weight)

    def vars(self):
        return (self.a, self.b)

    def residual(self, assignment, radii):
        d = np.linalg.norm(assignment[self.a] - assignment[self.b])
        return max(0.0, radii[self.a] + radii[self.b] - d)

    def energy(self, assignment, radii):
        r = self.residual(assignment, radii)
        return self.weight * r * r

    def grad(self, assignment, radii, out):
        ca, cb = assignment[self.a], assignment[self.b]
        delta = ca - cb
        d = np.linalg.norm(delta)
        r = radii[self.a] + radii[self.b] - d
        if r > 0 and d > 0:
            g = -2.0 * self.weight * r * delta / d
            out[self.a] += g
            out[self.b] -= g


class BoxContainment:
    """Squared hinges keeping a disk of its radius inside an axis-aligned box."""

    def __init__(self, name, lo, hi, weight=1.0):
        self.name = name
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.weight = float(weight)

    def vars(self):
        return (self.name,)

    def _hinges(self, assignment, radii):
        c = assignment[self.name]
        r = radii[self.name]
        return np.concatenate([np.maximum(0.0, self.lo + r - c), np.maximum(0.0, c - (self.hi - r))])

    def residual(self, assignment, radii):
        return float(np.max(self._hinges(assignment, radii)))

    def energy(self, assignment, radii):
        h = self._hinges(assignment, radii)
        return self.weight * float(np.sum(h * h))

    def grad(self, assignment, radii, out):
        c = assignment[self.name]
        r = radii[self.name]
        low = np.maximum(0.0, self.lo + r - c)
        high = np.maximum(0.0, c - (self.hi - r))
        out[self.name] += 2.0 * self.weight * (high - low)


@dataclass
class ConstraintGraph:
    """Decision variables (poses), conditioning variables (radii), constraints."""

    variables: list  # decision variable names, each a 2-D pose
    radii: dict  # conditioning: radius per variable name
    constraints: list = field(default_factory=list)

    def __post_init__(self):
        declared = set(self.variables)
        for c in self.constraints:
            for v in c.vars():
                if v not in declared:
                    raise ConfigError(f"constraint references undeclared variable {v!r}")


def _check_assignment(graph, assignment):
    missing = [v for v in graph.variables if v not in assignment]
    if missing:
        raise ConfigError(f"assignment missing variables: {missing}")


def constraint_energy(graph, assignment):
    """Sum of constraint energies at a full assignment."""
    _check_assignment(graph, assignment)
    assignment = {k: np.asarray(v, dtype=float) for k, v in assignment.items()}
    return float(sum(c.energy(assignment, graph.radii) for c in graph.constraints))


def constraint_residuals(graph, assignment):
    _check_assignment(graph, assignment)
    assignment = {k: np.asarray(v, dtype=float) for k, v in assignment.items()}
    return [c.residual(assignment, graph.radii) for c in graph.constraints]


def constraint_grad(graph, assignment):
    _check_assignment(graph, assignment)
    assignment = {k: np.asarray(v, dtype=float) for k, v in assignment.items()}
    out = {k: np.zeros(2) for k in graph.variables}
    for c in graph.constraints:
        c.grad(assignment, graph.radii, out)
    return out


class GraphEnergy(EnergyFunction):
    """ConstraintGraph as an EnergyFunction over the stacked pose vector."""

    def __init__(self, graph):
        self.graph = graph
        self.dim = 2 * len(graph.variables)

    def _unpack(self, x):
        return {v: x[2 * i : 2 * i + 2] for i, v in enumerate(self.graph.variables)}

    def energy(self, x):
        xb, single = _as_batch(x, self.dim)
        e = np.array([constraint_energy(self.graph, self._unpack(row)) for row in xb])
        return float(e[0]) if single else e

    def grad(self, x):
        xb, single = _as_batch(x, self.dim)
        out = np.zeros_like(xb)
        for i, row in enumerate(xb):
            g = constraint_grad(self.graph, self._unpack(row))
            out[i] = np.concatenate([g[v] for v in self.graph.variables])
        return out[0] if single else out


@dataclass
class ArrangeResult:
    assignments: list
    satisfied: np.ndarray
    stats: dict


def arrange(graph, cfg, n, box=None, tol=1e-3, n_levels=30, quench_steps=400, temp_hi=5.0,
            probe_restarts=8):
    """Sample assignments from the composed constraint energy.

    Starts each run uniformly inside ``box`` (inferred from the first
    containment constraint when omitted), anneals, quenches, and reports the
    fraction of runs with every hinge residual below ``tol``.  A randomized
    feasibility probe warns (and still runs) when no satisfying assignment is
    found.
    """
    if box is None:
        boxes = [c for c in graph.constraints if isinstance(c, BoxContainment)]
        if not boxes:
            raise ConfigError("pass box=(lo, hi) when the graph has no containment constraint")
        box = (boxes[0].lo, boxes[0].hi)
    lo = np.asarray(box[0], dtype=float)
    hi = np.asarray(box[1], dtype=float)
    energy = GraphEnergy(graph)

    def run_batch(gens):
        x0 = np.stack(
            [np.concatenate([g.uniform(lo, hi) for _ in graph.variables]) for g in gens]
        )
        return _anneal_batch(
            energy, x0, gens, n_levels, cfg.steps_per_level, cfg.step_size, temp_hi, quench_steps
        )

    probe_x, probe_alive = run_batch(
        [chain_rng(cfg.seed ^ 0x9E3779B9, k) for k in range(probe_restarts)]
    )
    probe_ok = any(
        bool(a) and max(constraint_residuals(graph, energy._unpack(row))) < tol
        for row, a in zip(probe_x, probe_alive)
    )
    if not probe_ok:
        warnings.warn("feasibility probe found no satisfying assignment; running anyway",
                      stacklevel=2)

    x, alive = run_batch([chain_rng(cfg.seed, run) for run in range(n)])
    assignments = []
    satisfied = np.zeros(n, dtype=bool)
    for run in range(n):
        a = energy._unpack(x[run])
        assignments.append({k: v.copy() for k, v in a.items()})
        if alive[run]:
            satisfied[run] = max(constraint_residuals(graph, a)) < tol
    stats = {
        "n": int(n),
        "satisfaction_rate": float(satisfied.mean()),
        "tol": float(tol),
        "feasibility_probe": bool(probe_ok),
    }
    return ArrangeResult(assignments=assignments, satisfied=satisfied, stats=stats)


def disks_in_box(n_disks, radius, lo, hi, weight=1.0):
    """Standard arrangement instance: n equal disks inside one box."""
    names = [f"disk{i}" for i in range(n_disks)]
    constraints = [BoxContainment(v, lo, hi, weight) for v in names]
    constraints += [
        DiskNonOverlap(names[i], names[j], weight)
        for i in range(n_disks)
        for j in range(i + 1, n_disks)
    ]
    return ConstraintGraph(variables=names, radii={v: radius for v in names},
                           constraints=constraints)


# --- fixed layouts and serialization


def umaze(cell=1.0):
    """Five-by-five U layout, drawn top row first: a central stem rising from
    the floor splits two corridors that join along the top."""
    grid = [
        [1, 1, 1, 1, 1],
        [1, 0, 0, 0, 1],
        [1, 0, 1, 0, 1],
        [1, 0, 1, 0, 1],
        [1, 1, 1, 1, 1],
    ]
    return MazeEnv(np.array(grid, dtype=bool)[::-1], cell=cell)


def empty_maze(size=5, cell=1.0):
    grid = np.zeros((size, size), dtype=bool)
    grid[0, :] = grid[-1, :] = grid[:, 0] = grid[:, -1] = True
    return MazeEnv(grid, cell=cell)


def maze_to_json(env):
    return {
        "grid": env.grid[::-1].astype(int).tolist(),  # top row first, as drawn
        "cell": env.cell,
        "dt": env.dt,
        "force_max": env.force_max,
        "dyn_sigma": env.dyn_sigma,
    }


def maze_from_json(obj):
    if isinstance(obj, str):
        obj = json.loads(obj)
    return MazeEnv(
        np.array(obj["grid"], dtype=bool)[::-1],
        cell=obj.get("cell", 1.0),
        dt=obj.get("dt", 0.15),
        force_max=obj.get("force_max", 2.0),
        dyn_sigma=obj.get("dyn_sigma", 0.05),
    )


def trajectory_to_csv(traj, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "px", "py", "vx", "vy", "ax", "ay"])
        for i in range(traj.horizon + 1):
            row = [i] + [repr(float(v)) for v in traj.states[i]]
            if i < traj.horizon:
                row += [repr(float(v)) for v in traj.actions[i]]
            else:
                row += ["", ""]
            writer.writerow(row)


def trajectory_from_csv(path):
    states = []
    actions = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            states.append([float(v) for v in row[1:5]])
            if row[5] != "":
                actions.append([float(v) for v in row[5:7]])
    return Trajectory(states=np.array(states), actions=np.array(actions))
