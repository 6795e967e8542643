"""Batched projection of QP trajectories onto the collision/kinematic/lane feasible set.

The projection

    min 1/2 ||xi_bar - xi_star||^2   s.t.  A xi_bar = b,  g(xi_bar) <= 0

is solved by alternating minimization on an augmented Lagrangian in which every
inequality is written in polar form (an angle ``alpha`` and a bounded ratio
``d``) or, for the lane bounds, with a nonnegative slack ``s``.  Each iteration
is a closed-form update of (alpha, d, s, lambda, e) followed by one affine
solve with a KKT matrix that is factorized once per obstacle count.

Row weighting: every constraint family is scaled by ``sqrt(w_family)``, and
the y-rows of the collision block are additionally scaled by ``a / b``.  With
that scaling the collision target reads ``x_o + a d cos(alpha)`` and
``(a/b) y_o + a d sin(alpha)`` and the closed-form alpha/d updates are the
exact minimizers of the augmented Lagrangian even when ``a != b``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import npops
from .basis import BasisMatrices
from .errors import ParameterError, UsageError
from .qpcore import KktFactor, prefactor_kkt_gram

D_OBS_MAX = 1e6
DEFAULT_RHO = 0.5


@dataclass(frozen=True)
class ConstraintWeights:
    # collision rows come in n_obs blocks of n_steps; a lighter weight keeps them
    # from swamping the kinematic families
    obstacle: float = 0.1
    velocity: float = 1.0
    acceleration: float = 1.0
    lane: float = 1.0

    def sqrt(self):
        return (np.sqrt(self.obstacle), np.sqrt(self.velocity),
                np.sqrt(self.acceleration), np.sqrt(self.lane))


@dataclass
class SceneConstraints:
    """Constraint geometry for one planning cycle.

    ``x_obs``/``y_obs`` hold the predicted obstacle centres, shape (n_obs, n_steps)
    when shared by a whole batch or (B, n_obs, n_steps) per sample.  ``y_lb`` and
    ``y_ub`` are scalars or per-sample arrays of shape (B,).  Only the obstacle
    count enters the KKT matrix, so per-sample geometry shares one factorization.
    """

    basis: BasisMatrices
    x_obs: np.ndarray
    y_obs: np.ndarray
    a: float = 7.0
    b: float = 3.2
    v_min: float = 0.1
    v_max: float = 10.0
    a_max: float = 4.0
    y_lb: float = -1.0
    y_ub: float = 1.0
    weights: ConstraintWeights = field(default_factory=ConstraintWeights)
    d_obs_max: float = D_OBS_MAX

    def __post_init__(self):
        n = self.basis.n_steps
        if n < 1:
            raise ParameterError("zero-size time grid")
        self.x_obs = _obstacle_array(self.x_obs, n)
        self.y_obs = _obstacle_array(self.y_obs, n)
        if self.x_obs.shape != self.y_obs.shape:
            raise ParameterError("x_obs and y_obs must have the same shape")
        self.y_lb = _bound(self.y_lb)
        self.y_ub = _bound(self.y_ub)
        if not (self.a > 0 and self.b > 0):
            raise ParameterError("ellipse axes must be positive")
        if not (0 <= self.v_min <= self.v_max):
            raise ParameterError("need 0 <= v_min <= v_max")
        if not self.a_max > 0:
            raise ParameterError("a_max must be positive")
        if not np.all(self.y_lb < self.y_ub):
            raise ParameterError("need y_lb < y_ub")

    @property
    def n_obs(self) -> int:
        return self.x_obs.shape[1]

    @property
    def n_steps(self) -> int:
        return self.basis.n_steps

    def geometry_key(self):
        """Everything the projection KKT matrix depends on."""
        return (self.n_obs, self.a / self.b, self.weights, id(self.basis))

    # dense matrices; used for documentation, tests and small problems only
    @property
    def y_lane(self) -> np.ndarray:
        """Stacked ``[y_ub...; -y_lb...]``; (2 n_steps,) or (B, 2 n_steps) for per-sample bounds."""
        ones = np.ones(self.n_steps)
        return np.concatenate([self.y_ub * ones, -self.y_lb * ones], axis=-1)

    @property
    def d_min(self) -> np.ndarray:
        n = self.n_steps
        return np.concatenate([np.ones(self.n_obs * n), np.full(n, self.v_min), np.zeros(n)])

    @property
    def d_max(self) -> np.ndarray:
        n = self.n_steps
        return np.concatenate([np.full(self.n_obs * n, self.d_obs_max), np.full(n, self.v_max), np.full(n, self.a_max)])

    def axis_block(self, axis: int) -> np.ndarray:
        """Rows [F_o; Wd; Wdd] (weighted) acting on one axis's coefficients."""
        B = self.basis
        so, sv, sa, _ = self.weights.sqrt()
        scale = 1.0 if axis == 0 else self.a / self.b
        Fo = np.tile(B.W, (self.n_obs, 1)) * (so * scale)
        return np.vstack([Fo, sv * B.Wd, sa * B.Wdd])

    @property
    def F_tilde(self) -> np.ndarray:
        Bx = self.axis_block(0)
        By = self.axis_block(1)
        n = self.basis.n_coeffs
        Ft = np.zeros((Bx.shape[0] + By.shape[0], 2 * n))
        Ft[: Bx.shape[0], :n] = Bx
        Ft[Bx.shape[0] :, n:] = By
        return Ft

    @property
    def G(self) -> np.ndarray:
        n = self.basis.n_coeffs
        G = np.zeros((2 * self.n_steps, 2 * n))
        G[: self.n_steps, n:] = self.basis.W
        G[self.n_steps :, n:] = -self.basis.W
        return G

    @property
    def F(self) -> np.ndarray:
        sl = self.weights.sqrt()[3]
        return np.vstack([self.F_tilde, sl * self.G])

    def gram(self) -> np.ndarray:
        """F^T F assembled from the block structure."""
        B = self.basis
        so, sv, sa, sl = self.weights.sqrt()
        n = B.n_coeffs
        WtW = B.W.T @ B.W
        common = sv**2 * B.Wd.T @ B.Wd + sa**2 * B.Wdd.T @ B.Wdd
        gx = so**2 * self.n_obs * WtW + common
        gy = so**2 * (self.a / self.b) ** 2 * self.n_obs * WtW + common + 2 * sl**2 * WtW
        out = np.zeros((2 * n, 2 * n))
        out[:n, :n] = gx
        out[n:, n:] = gy
        return out


def _obstacle_array(v, n):
    v = np.asarray(v, dtype=float)
    if v.ndim == 3:
        if v.shape[2] != n:
            raise ParameterError(f"obstacle paths need {n} samples, got {v.shape[2]}")
        return v
    if v.size % n or (v.ndim == 2 and v.shape[-1] != n):
        raise ParameterError(f"obstacle paths need {n} samples per obstacle")
    return v.reshape(1, -1, n)


def _bound(v):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        return float(v)
    return v.reshape(-1, 1)


def reformulate_constraints(x_obs, y_obs, basis: BasisMatrices, **bounds) -> SceneConstraints:
    return SceneConstraints(basis=basis, x_obs=x_obs, y_obs=y_obs, **bounds)


@dataclass
class ProjectionState:
    """Per-sample AM variables; every array carries a leading batch axis."""

    xi_bar: np.ndarray
    lam: np.ndarray
    alpha_o: np.ndarray
    alpha_v: np.ndarray
    alpha_a: np.ndarray
    d_o: np.ndarray
    d_v: np.ndarray
    d_a: np.ndarray
    s: np.ndarray
    e: np.ndarray
    residual_trace: np.ndarray | None = None

    @property
    def alpha(self):
        return self.alpha_o, self.alpha_v, self.alpha_a

    @property
    def d(self):
        return self.d_o, self.d_v, self.d_a


# ---------------------------------------------------------------------------
# shared AM kernel
#
# Written against a numpy-like namespace ``xp`` so that the same code runs on
# plain arrays (inference) and on the reverse-mode tape (training).


def _polar(xp, u, w, lo, hi):
    """Closed-form (cos, sin, d) for min ||(u, w) - d (cos a, sin a)||^2, lo <= d <= hi.

    The angle is atan2(w, u), with atan2(0, 0) := 0.
    """
    r2 = u * u + w * w
    pos = r2 > 0
    r = xp.sqrt(xp.where(pos, r2, 1.0))
    cos = xp.where(pos, u / r, 1.0)
    sin = xp.where(pos, w / r, 0.0)
    d = xp.clip(xp.where(pos, r, 0.0), lo, hi)
    return cos, sin, d


def _polar_residual(xp, u, w, lo, hi):
    """The residual (u, w) - d (cos a, sin a) at the minimizers of :func:`_polar`.

    With r = |(u, w)| > 0 it equals (u, w) (1 - clip(r, lo, hi) / r); at the
    origin the angle is 0 and it is (-lo, 0).
    """
    r2 = u * u + w * w
    pos = r2 > 0
    r = xp.sqrt(xp.where(pos, r2, 1.0))
    f = xp.where(pos, 1.0 - xp.clip(r, lo, hi) / r, 0.0)
    return u * f - xp.where(pos, 0.0, lo), w * f


def _h_core(xp, xi_bar, scene: SceneConstraints, want_state=False):
    """Constraint residual ``F xi_bar - e`` pulled back to coefficient space.

    Returns ``g = F^T (F xi_bar - e)`` with (alpha, d, s, e) at their closed-form
    minimizers for the current iterate, plus the per-family pieces when
    ``want_state`` is set.
    """
    B = scene.basis
    n = B.n_coeffs
    so, sv, sa, sl = scene.weights.sqrt()
    cx = xi_bar[:, :n]
    cy = xi_bar[:, n:]
    x = cx @ B.W.T
    y = cy @ B.W.T
    vx = cx @ B.Wd.T
    vy = cy @ B.Wd.T
    ax = cx @ B.Wdd.T
    ay = cy @ B.Wdd.T

    gx = 0.0
    gy = 0.0
    parts = {}
    if scene.n_obs:
        # ellipse-normalized displacement, (B, n_obs, n_steps)
        u = (x[:, None, :] - scene.x_obs) / scene.a
        w = (y[:, None, :] - scene.y_obs) / scene.b
        eu, ew = _polar_residual(xp, u, w, 1.0, scene.d_obs_max)
        # weighted residual rows: x -> a (u - d cos), y -> (a/b) b (w - d sin)
        rx = eu * (so * scene.a)
        ry = ew * (so * scene.a)
        gx = gx + (so * rx.sum(axis=1)) @ B.W
        gy = gy + (so * scene.a / scene.b * ry.sum(axis=1)) @ B.W
        if want_state:
            parts["obs"] = _polar(xp, u, w, 1.0, scene.d_obs_max) + (rx, ry)
    evx, evy = _polar_residual(xp, vx, vy, scene.v_min, scene.v_max)
    rvx = evx * sv
    rvy = evy * sv
    eax, eay = _polar_residual(xp, ax, ay, 0.0, scene.a_max)
    rax = eax * sa
    ray = eay * sa
    gx = gx + (sv * rvx) @ B.Wd + (sa * rax) @ B.Wdd
    gy = gy + (sv * rvy) @ B.Wd + (sa * ray) @ B.Wdd
    # lane: G xi - (y_lane - s) with s = max(0, y_lane - G xi) leaves only the violation
    up = xp.maximum(y - scene.y_ub, 0.0) * sl
    lo = xp.maximum(scene.y_lb - y, 0.0) * sl
    gy = gy + (sl * (up - lo)) @ B.W
    g = xp.concatenate([gx, gy], axis=1)
    if not want_state:
        return g, None
    parts.update(vel=_polar(xp, vx, vy, scene.v_min, scene.v_max) + (rvx, rvy),
                 acc=_polar(xp, ax, ay, 0.0, scene.a_max) + (rax, ray),
                 lane=(up, lo), samples=(x, y, vx, vy, ax, ay))
    return g, parts


def _am_iteration(xp, solve, xi_bar, lam, xi_star, b, scene, FtF, rho):
    g, _ = _h_core(xp, xi_bar, scene)
    lam = lam - rho * g
    top = xi_star + rho * (xi_bar @ FtF - g) + lam
    xi_next = solve(xp.concatenate([top, b], axis=1))
    return xi_next, lam


# ---------------------------------------------------------------------------
# public API


def h_update(xi_bar, lam, scene: SceneConstraints, rho: float = DEFAULT_RHO) -> ProjectionState:
    """One closed-form update of (alpha, d, s, lambda, e) at the current iterate.

    ``xi_bar`` and ``lam`` are batched (B, n_xi).  The returned state carries the
    *updated* multiplier and the dense target vector ``e`` ordered as the rows of
    ``scene.F``.
    """
    xi_bar = np.atleast_2d(np.asarray(xi_bar, dtype=float))
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    g, parts = _h_core(npops, xi_bar, scene, want_state=True)
    lam_new = lam - rho * g
    Bsz = xi_bar.shape[0]
    n = scene.n_steps
    so, sv, sa, sl = scene.weights.sqrt()
    if scene.n_obs:
        cos_o, sin_o, d_o, _, _ = parts["obs"]
        alpha_o = np.arctan2(sin_o, cos_o)
        ex_o = so * (scene.x_obs + scene.a * d_o * cos_o)
        ey_o = so * (scene.a / scene.b) * (scene.y_obs + scene.b * d_o * sin_o)
    else:
        alpha_o = d_o = np.zeros((Bsz, 0, n))
        ex_o = ey_o = np.zeros((Bsz, 0, n))
    cos_v, sin_v, d_v, _, _ = parts["vel"]
    cos_a, sin_a, d_a, _, _ = parts["acc"]
    y = parts["samples"][1]
    y_lane = scene.y_lane
    Gy = np.concatenate([y, -y], axis=1)
    s = np.maximum(0.0, y_lane - Gy)
    e = np.concatenate([
        ex_o.reshape(Bsz, -1), sv * d_v * cos_v, sa * d_a * cos_a,
        ey_o.reshape(Bsz, -1), sv * d_v * sin_v, sa * d_a * sin_a,
        sl * (y_lane - s),
    ], axis=1)
    return ProjectionState(
        xi_bar=xi_bar, lam=lam_new,
        alpha_o=alpha_o, alpha_v=np.arctan2(sin_v, cos_v), alpha_a=np.arctan2(sin_a, cos_a),
        d_o=d_o, d_v=d_v, d_a=d_a, s=s, e=e,
    )


def augmented_lagrangian(xi_bar, xi_star, lam, e, scene: SceneConstraints, rho: float = DEFAULT_RHO) -> np.ndarray:
    """Per-sample value of the augmented Lagrangian for a dense target ``e``."""
    F = scene.F
    r = np.atleast_2d(xi_bar) @ F.T - e
    diff = np.atleast_2d(xi_bar) - xi_star
    return 0.5 * np.sum(diff**2, -1) - np.sum(lam * xi_bar, -1) + 0.5 * rho * np.sum(r**2, -1)


@dataclass
class Residuals:
    collision: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray
    lane: np.ndarray
    per_instant: dict

    @property
    def max(self) -> np.ndarray:
        return np.max(np.stack([self.collision, self.velocity, self.acceleration, self.lane]), axis=0)

    @property
    def total(self) -> np.ndarray:
        return self.collision + self.velocity + self.acceleration + self.lane


def constraint_violations(xp, xi, scene: SceneConstraints):
    """Per-instant violations of the original inequalities (not of the polar form)."""
    B = scene.basis
    n = B.n_coeffs
    cx = xi[:, :n]
    cy = xi[:, n:]
    x = cx @ B.W.T
    y = cy @ B.W.T
    vx = cx @ B.Wd.T
    vy = cy @ B.Wd.T
    ax = cx @ B.Wdd.T
    ay = cy @ B.Wdd.T
    out = {}
    if scene.n_obs:
        u = (x[:, None, :] - scene.x_obs) / scene.a
        w = (y[:, None, :] - scene.y_obs) / scene.b
        dist = xp.sqrt(xp.maximum(u * u + w * w, 1e-300))
        out["collision"] = xp.maximum(1.0 - dist, 0.0)
    else:
        out["collision"] = None
    speed2 = vx * vx + vy * vy
    speed = xp.sqrt(xp.maximum(speed2, 1e-300))
    out["velocity"] = xp.maximum(speed - scene.v_max, 0.0) + xp.maximum(scene.v_min - speed, 0.0)
    acc = xp.sqrt(xp.maximum(ax * ax + ay * ay, 1e-300))
    out["acceleration"] = xp.maximum(acc - scene.a_max, 0.0)
    out["lane"] = xp.concatenate([xp.maximum(y - scene.y_ub, 0.0), xp.maximum(scene.y_lb - y, 0.0)], axis=1)
    return out


def family_norms(xp, xi, scene: SceneConstraints):
    """(collision, velocity, acceleration, lane) violation norms per sample, plus the raw violations."""
    v = constraint_violations(xp, xi, scene)
    Bsz = xi.shape[0]
    coll = v["collision"]
    coll_norm = np.zeros(Bsz) if coll is None else xp.norm(coll.reshape(Bsz, -1), axis=1)
    return (coll_norm, xp.norm(v["velocity"], axis=1), xp.norm(v["acceleration"], axis=1),
            xp.norm(v["lane"], axis=1)), v


def residuals(xi_bar, scene: SceneConstraints) -> Residuals:
    """Euclidean norm of each family's violation vector, per sample."""
    xi = np.atleast_2d(np.asarray(xi_bar, dtype=float))
    (c, v, a, l), per = family_norms(npops, xi, scene)
    return Residuals(collision=c, velocity=v, acceleration=a, lane=l, per_instant=per)


class Projector:
    """Caches the projection KKT factorization per scene geometry."""

    def __init__(self, A: np.ndarray, rho: float = DEFAULT_RHO):
        self.A = np.asarray(A, dtype=float)
        self.rho = float(rho)
        self._factors: dict = {}
        self._grams: dict = {}

    def factor(self, scene: SceneConstraints) -> KktFactor:
        key = scene.geometry_key()
        f = self._factors.get(key)
        if f is None:
            FtF = scene.gram()
            f = prefactor_kkt_gram(FtF, self.A, self.rho)
            self._factors[key] = f
            self._grams[key] = FtF
        return f

    def prepare(self, scenes):
        for sc in scenes:
            self.factor(sc)

    def gram(self, scene: SceneConstraints) -> np.ndarray:
        self.factor(scene)
        return self._grams[scene.geometry_key()]

    def project(self, xi_star, b, scene, lam0=None, xi0=None, max_iters: int = 100, trace: bool = False):
        return project(xi_star, b, scene, self.factor(scene), lam0, xi0, max_iters, trace, FtF=self.gram(scene))


def project(xi_star, b, scene: SceneConstraints, factor: KktFactor | None, lam0=None, xi0=None,
            max_iters: int = 100, trace: bool = False, FtF=None):
    """Run ``max_iters`` AM iterations for a batch of QP outputs.

    Parameters
    ----------
    xi_star : (B, n_xi) QP solutions to project.
    b : (B, n_eq) or (n_eq,) equality right-hand sides b(p).
    factor : KKT factorization of ``[[I + rho F^T F, A^T], [A, 0]]`` for this scene.
    lam0, xi0 : initial multiplier (default 0) and iterate (default ``xi_star``).
    trace : record the max constraint residual after every iteration.

    Returns
    -------
    xi_bar : (B, n_xi)
    state : ProjectionState at the last iteration (``residual_trace`` is (max_iters, B)
        when ``trace`` is set).
    """
    if factor is None:
        raise UsageError("project() needs the KKT factor of this scene; call Projector.factor first")
    xi_star = np.atleast_2d(np.asarray(xi_star, dtype=float))
    Bsz, n_xi = xi_star.shape
    if factor.n_xi != n_xi:
        raise UsageError(f"factor is for n_xi={factor.n_xi}, trajectories have {n_xi}")
    if factor.rho is None:
        raise UsageError("factor was not built by prefactor_kkt")
    rho = factor.rho
    b = np.broadcast_to(np.atleast_2d(np.asarray(b, dtype=float)), (Bsz, factor.n_eq))
    lam = np.zeros_like(xi_star) if lam0 is None else np.broadcast_to(np.asarray(lam0, dtype=float), xi_star.shape).copy()
    xi_bar = xi_star.copy() if xi0 is None else np.broadcast_to(np.asarray(xi0, dtype=float), xi_star.shape).copy()
    if max_iters < 0:
        raise ParameterError("max_iters must be >= 0")
    if FtF is None:
        FtF = scene.gram()

    def solve(eta):
        return factor.solve(eta)[:, :n_xi]

    hist = np.zeros((max_iters, Bsz)) if trace else None
    prev = xi_bar
    lam_prev = lam
    for k in range(max_iters):
        prev, lam_prev = xi_bar, lam
        xi_bar, lam = _am_iteration(npops, solve, xi_bar, lam, xi_star, b, scene, FtF, rho)
        if trace:
            hist[k] = residuals(xi_bar, scene).max
    state = h_update(prev, lam_prev, scene, rho)
    state.xi_bar = xi_bar
    state.residual_trace = hist
    return xi_bar, state


def unroll(xp, xi_star, b, scene: SceneConstraints, factor: KktFactor, FtF, lam0, xi0, iters: int):
    """The projection loop of :func:`project` written against ``xp``.

    Returns the list of iterates ``[xi_bar^1, ..., xi_bar^iters]`` and the
    final multiplier.  With the tape namespace every block is recorded for
    backpropagation; with :mod:`frenetplan.npops` it reproduces ``project``
    bit for bit.
    """
    n_xi = factor.n_xi

    def solve(eta):
        return xp.kkt_solve(factor, eta)[:, :n_xi]

    xi_bar, lam = xi0, lam0
    out = []
    for _ in range(iters):
        xi_bar, lam = _am_iteration(xp, solve, xi_bar, lam, xi_star, b, scene, FtF, factor.rho)
        out.append(xi_bar)
    return out, lam


def write_residual_trace(path, trace: np.ndarray):
    """CSV with columns iteration, sample_index, residual (one row per pair)."""
    trace = np.asarray(trace)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["iteration", "sample_index", "residual"])
        for k in range(trace.shape[0]):
            for j in range(trace.shape[1]):
                wr.writerow([k + 1, j, repr(float(trace[k, j]))])
