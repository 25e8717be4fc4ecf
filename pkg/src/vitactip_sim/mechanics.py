"""Quasi-static contact between the elastic skin and a rigid stimulus.

The skin is a spring network (linearized edge springs plus a graph-Laplacian
smoothing term) pressed against a rigid signed-distance solid through a
quadratic penetration penalty.  Equilibrium is found by damped projected
gradient descent: Jacobi-preconditioned heavy-ball steps, accepted only when
the total energy does not increase, with clamped rim vertices projected back
to zero displacement.  Shear is a second solve stage that adds capped
tangential springs (Coulomb friction) anchored at the press-time contact.

All lengths mm, forces N.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import _kernels as K
from .errors import ConfigurationError, InfeasiblePoseError, SolverError
from .sensor import SensorModel

_SHAPE_CODES = {"plate": K.PLATE, "sphere": K.SPHERE, "edge": K.BOX_EDGE, "grating": K.GRATING}


@dataclass(frozen=True)
class Stimulus:
    """Rigid probe shape, one of: plate, sphere, edge (square block), grating.

    Canonical frame: the solid occupies the region above its contact surface
    with the lowest point at z = 0; it descends onto the dome along -z.
    For gratings, ``line_spacing_mm`` is the groove width between ridges and
    spacing 0 degenerates to a solid flat board.
    """

    kind: str
    radius_mm: float = 0.0          # sphere
    side_mm: float = 0.0            # edge block
    line_spacing_mm: float = 0.0    # grating
    ridge_width_mm: float = 1.0     # grating
    groove_depth_mm: float = 1.0    # grating

    def __post_init__(self):
        if self.kind not in _SHAPE_CODES:
            raise ConfigurationError(
                f"stimulus kind {self.kind!r} not one of {sorted(_SHAPE_CODES)}"
            )
        if self.kind == "sphere" and self.radius_mm <= 0:
            raise ConfigurationError("radius_mm must be > 0 for sphere stimulus")
        if self.kind == "edge" and self.side_mm <= 0:
            raise ConfigurationError("side_mm must be > 0 for edge stimulus")
        if self.kind == "grating":
            if self.line_spacing_mm < 0:
                raise ConfigurationError("line_spacing_mm must be >= 0")
            if self.ridge_width_mm <= 0 or self.groove_depth_mm <= 0:
                raise ConfigurationError(
                    "ridge_width_mm and groove_depth_mm must be > 0"
                )

    @property
    def code(self) -> int:
        return _SHAPE_CODES[self.kind]

    @property
    def params(self) -> np.ndarray:
        if self.kind == "sphere":
            p = (self.radius_mm, 0.0, 0.0, 0.0)
        elif self.kind == "edge":
            p = (self.side_mm, 0.0, 0.0, 0.0)
        elif self.kind == "grating":
            p = (self.line_spacing_mm, self.ridge_width_mm, self.groove_depth_mm, 0.0)
        else:
            p = (0.0, 0.0, 0.0, 0.0)
        return np.asarray(p, dtype=np.float64)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "Stimulus":
        return cls(**d)


def flat_plate() -> Stimulus:
    return Stimulus("plate")


def sphere(radius_mm: float) -> Stimulus:
    return Stimulus("sphere", radius_mm=radius_mm)


def square_edge(side_mm: float) -> Stimulus:
    return Stimulus("edge", side_mm=side_mm)


def grating_board(line_spacing_mm: float, ridge_width_mm: float = 1.0,
                  groove_depth_mm: float = 1.0) -> Stimulus:
    return Stimulus(
        "grating",
        line_spacing_mm=line_spacing_mm,
        ridge_width_mm=ridge_width_mm,
        groove_depth_mm=groove_depth_mm,
    )


@dataclass(frozen=True)
class StimulusPose:
    """Stimulus placement relative to the sensor axis.

    ``z_mm`` is press depth past first touch (positive = deeper, negative =
    hovering above the skin); ``theta_deg`` rotates the stimulus about the
    sensor Z axis; ``shear_mm`` is a tangential displacement applied as a
    second stage after the initial press.
    """

    x_mm: float = 0.0
    y_mm: float = 0.0
    z_mm: float = 0.0
    theta_deg: float = 0.0
    shear_mm: tuple[float, float] = (0.0, 0.0)

    def validate(self, params: "SolverParams") -> None:
        lo, hi = params.safe_z_range_mm
        if not lo <= self.z_mm <= hi:
            raise ConfigurationError(
                f"z_mm={self.z_mm} outside safe range [{lo}, {hi}]"
            )
        if math.hypot(*self.shear_mm) > params.max_shear_mm:
            raise ConfigurationError(
                f"shear_mm magnitude exceeds max {params.max_shear_mm}"
            )

    def to_dict(self) -> dict:
        return {
            "x_mm": self.x_mm,
            "y_mm": self.y_mm,
            "z_mm": self.z_mm,
            "theta_deg": self.theta_deg,
            "shear_mm": list(self.shear_mm),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StimulusPose":
        d = dict(d)
        if "shear_mm" in d:
            d["shear_mm"] = tuple(d["shear_mm"])
        return cls(**d)


@dataclass(frozen=True)
class SolverParams:
    """Contact-solve configuration.

    ``stiffness_scale`` is the single global calibration constant chosen so
    a centred 1 mm flat press produces about 0.8 N of normal force; it
    multiplies every stiffness, so equilibrium displacements are unaffected
    and only reported forces scale.
    """

    kn: float = 4.0                  # penetration penalty, N/mm^3 (per area)
    kt: float = 2.0                  # tangential spring, N/mm^3 (per area)
    mu: float = 0.6                  # Coulomb friction coefficient
    bend_stiffness: float = 0.15     # graph-Laplacian weight, N/mm
    # global force calibration: centred 1 mm flat press -> 0.8 N normal force
    # (see scripts/calibrate_force_scale.py)
    stiffness_scale: float = 0.65767546901136
    tol: float = 1e-6                # max nodal residual force, N
    max_iters: int = 5000
    step: float = 0.8                # initial preconditioned step size
    momentum: float = 0.92
    safe_z_range_mm: tuple[float, float] = (-2.0, 2.0)
    max_shear_mm: float = 3.0
    max_start_penetration_frac: float = 0.5
    record_energy: bool = False

    def validate(self) -> None:
        for name in ("kn", "kt", "bend_stiffness", "stiffness_scale", "tol", "step"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.mu < 0:
            raise ConfigurationError("mu must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must be in [0, 1)")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["safe_z_range_mm"] = list(self.safe_z_range_mm)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SolverParams":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(
                f"unknown solver field(s): {', '.join(sorted(unknown))}"
            )
        kwargs = dict(data)
        if "safe_z_range_mm" in kwargs:
            kwargs["safe_z_range_mm"] = tuple(kwargs["safe_z_range_mm"])
        return cls(**kwargs)


@dataclass(frozen=True)
class DeformationState:
    """Converged skin state for one contact scene.

    Contact bookkeeping (normals, areas, tangential mismatch) is carried so
    the wrench is a pure function of this state plus solver params.
    ``stimulus_world`` is (cos t, sin t, tx, ty, tz) after shear, so the
    renderer can place the stimulus exactly as the solver saw it.
    """

    node_displacements: np.ndarray   # (V, 3)
    pin_tips: np.ndarray             # (P, 3)
    penetration: np.ndarray          # (V,)
    solver_residual: float
    iterations: int
    contact_index: np.ndarray        # (C,) vertex ids with penetration > 0
    contact_normal: np.ndarray       # (C, 3) unit outward SDF gradients
    contact_area: np.ndarray         # (C,)
    contact_point: np.ndarray        # (C, 3) deformed positions
    tangential_mismatch: np.ndarray  # (C, 3) skin-minus-dragged-anchor, tangential
    stimulus_world: np.ndarray       # (5,)
    energy_trace: tuple = ()


@dataclass(frozen=True)
class ContactWrench:
    fx: float
    fy: float
    fz: float
    px: float
    py: float
    pz: float
    has_contact: bool

    def force(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.fz])

    def centroid(self) -> np.ndarray:
        return np.array([self.px, self.py, self.pz])


def sdf(stimulus: Stimulus, points, pose_world: np.ndarray | None = None) -> np.ndarray:
    """Signed distance from world points to the stimulus solid.

    Negative inside, zero on the surface, positive outside.  Exact for
    sphere and plate; conservative (never exceeding the true distance
    outside) for the composite shapes.  ``pose_world`` defaults to the
    canonical placement (identity rotation, origin translation).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if pose_world is None:
        pose_world = np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    out = np.empty(pts.shape[0])
    K.sdf_points(stimulus.code, stimulus.params, pose_world, pts, out)
    return out[0] if np.asarray(points).ndim == 1 else out


def world_pose(pose: StimulusPose, tz: float) -> np.ndarray:
    t = math.radians(pose.theta_deg)
    return np.array([math.cos(t), math.sin(t), pose.x_mm, pose.y_mm, tz])


def first_touch_offset(model: SensorModel, stimulus: Stimulus,
                       pose: StimulusPose) -> float:
    """Vertical stimulus offset tz at which the rest skin is first touched.

    Descends from far above by the current clearance (the SDF is 1-Lipschitz
    in tz), which converges onto the first-touch height from above and never
    tunnels through bounded solids.
    """
    rest = model.rest_nodes
    tz = 4.0 * model.spec.dome_radius_mm
    clearance = K.sdf_min(stimulus.code, stimulus.params, world_pose(pose, tz), rest)
    for _ in range(200):
        if clearance < 1e-9:
            return tz
        tz -= clearance
        clearance = K.sdf_min(
            stimulus.code, stimulus.params, world_pose(pose, tz), rest
        )
    raise InfeasiblePoseError(
        "stimulus cannot reach the skin at this horizontal offset"
    )


_NO_FRICTION = (
    np.zeros(0, dtype=np.int64),
    np.zeros((0, 3)),
    np.zeros((0, 3)),
    0.0,
    0.0,
    np.zeros(0),
    np.zeros(0),
)


class _Energy:
    """Gradient/energy evaluator for one posed scene (optionally sheared)."""

    def __init__(self, model: SensorModel, stimulus: Stimulus, params: SolverParams,
                 pose_arr: np.ndarray):
        s = params.stiffness_scale
        self.model = model
        self.code = stimulus.code
        self.sparams = stimulus.params
        self.pose_arr = pose_arr
        self.ke = np.ascontiguousarray(model.edge_stiffness * s)
        self.kb = params.bend_stiffness * s
        self.kn_area = np.ascontiguousarray(params.kn * s * model.vertex_area)
        self.dhat = np.ascontiguousarray(
            (model.rest_nodes[model.edges[:, 1]] - model.rest_nodes[model.edges[:, 0]])
            / model.edge_rest_length[:, None]
        )
        self.friction = _NO_FRICTION

    def __call__(self, u, g, phi, want_grad=True):
        idx, normals, anchors, sx, sy, kt_area, caps = self.friction
        return K.total_energy_grad(
            self.model.rest_nodes, u, self.model.edges, self.dhat, self.ke,
            self.kb, self.code, self.sparams, self.pose_arr, self.kn_area,
            idx, normals, anchors, sx, sy, kt_area, caps, g, phi, want_grad,
        )


def _descend(energy: _Energy, u: np.ndarray, params: SolverParams,
             boundary: np.ndarray, precond: np.ndarray, trace: list | None):
    """Damped projected gradient descent to max nodal residual < tol."""
    model = energy.model
    vel = np.zeros_like(u)
    phi = np.zeros(model.n_vertices)
    record = trace is not None
    trace_buf = np.empty(params.max_iters + 1 if record else 1)
    idx, normals, anchors, sx, sy, kt_area, caps = energy.friction
    iters, residual, done, n_trace = K.descend_loop(
        u, vel, phi, model.rest_nodes, model.edges, energy.dhat, energy.ke,
        energy.kb, energy.code, energy.sparams, energy.pose_arr, energy.kn_area,
        idx, normals, anchors, sx, sy, kt_area, caps,
        boundary, precond, params.tol, params.max_iters, params.step,
        params.momentum, trace_buf, record,
    )
    if record:
        trace.extend(trace_buf[:n_trace].tolist())
    if not done:
        raise SolverError(
            f"contact solve did not converge: residual {residual:.3e} N after "
            f"{iters} iterations",
            residual=float(residual),
            iterations=int(iters),
        )
    return u, phi, float(residual), int(iters)


def _jacobi_precond(model: SensorModel, params: SolverParams) -> np.ndarray:
    s = params.stiffness_scale
    diag = np.zeros(model.n_vertices)
    contrib = model.edge_stiffness * s + 2.0 * params.bend_stiffness * s
    np.add.at(diag, model.edges[:, 0], contrib)
    np.add.at(diag, model.edges[:, 1], contrib)
    diag += params.kn * s * model.vertex_area + params.kt * s * model.vertex_area
    return 1.0 / diag


def solve_contact(model: SensorModel, stimulus: Stimulus, pose: StimulusPose,
                  params: SolverParams | None = None):
    """Solve one contact scene; returns (DeformationState, ContactWrench).

    Stage one presses the stimulus to its posed depth; if the pose carries a
    shear displacement, stage two shifts the stimulus tangentially and
    re-solves with Coulomb-capped tangential springs anchored at the
    press-time contact.
    """
    params = params or SolverParams()
    params.validate()
    pose.validate(params)

    tz0 = first_touch_offset(model, stimulus, pose)
    press_pose = world_pose(pose, tz0 - pose.z_mm)

    inside = K.sdf_inside_count(stimulus.code, stimulus.params, press_pose,
                                model.rest_nodes)
    if inside > params.max_start_penetration_frac * model.n_vertices:
        raise InfeasiblePoseError(
            f"stimulus initially intersects {inside} of {model.n_vertices} "
            "skin nodes"
        )

    boundary = model.boundary_mask
    precond = _jacobi_precond(model, params)
    trace: list | None = [] if params.record_energy else None

    energy = _Energy(model, stimulus, params, press_pose)
    u = np.zeros((model.n_vertices, 3))
    u, phi, residual, iters = _descend(energy, u, params, boundary, precond, trace)

    final_pose = press_pose
    friction_payload = None
    shear = np.asarray(pose.shear_mm, dtype=np.float64)
    if np.any(shear != 0.0):
        contact_idx = np.flatnonzero(phi > 0.0).astype(np.int64)
        if contact_idx.size:
            pts = model.rest_nodes[contact_idx] + u[contact_idx]
            normals = _contact_normals(stimulus, press_pose, pts)
            anchors = pts.copy()
            s = params.stiffness_scale
            kn_area = params.kn * s * model.vertex_area[contact_idx]
            fn_z = kn_area * phi[contact_idx] * np.maximum(0.0, -normals[:, 2])
            caps = params.mu * fn_z
            kt_area = params.kt * s * model.vertex_area[contact_idx]
            final_pose = press_pose.copy()
            final_pose[2] += shear[0]
            final_pose[3] += shear[1]
            energy2 = _Energy(model, stimulus, params, final_pose)
            energy2.friction = (
                contact_idx, np.ascontiguousarray(normals), anchors,
                float(shear[0]), float(shear[1]),
                np.ascontiguousarray(kt_area), np.ascontiguousarray(caps),
            )
            friction_payload = (contact_idx, normals, anchors)
            u, phi, residual, it2 = _descend(
                energy2, u, params, boundary, precond, trace
            )
            iters += it2

    state = _build_state(
        model, stimulus, final_pose, u, phi, residual, iters, shear,
        friction_payload, trace,
    )
    return state, compute_wrench(state, params)


def _contact_normals(stimulus: Stimulus, pose_arr: np.ndarray,
                     points: np.ndarray) -> np.ndarray:
    """Unit outward SDF gradients at world points (central differences)."""
    h = 1e-5
    grads = np.empty_like(points)
    buf_p = np.empty(points.shape[0])
    buf_m = np.empty(points.shape[0])
    for axis in range(3):
        shifted = points.copy()
        shifted[:, axis] += h
        K.sdf_points(stimulus.code, stimulus.params, pose_arr, shifted, buf_p)
        shifted[:, axis] -= 2 * h
        K.sdf_points(stimulus.code, stimulus.params, pose_arr, shifted, buf_m)
        grads[:, axis] = (buf_p - buf_m) / (2 * h)
    norm = np.linalg.norm(grads, axis=1, keepdims=True)
    norm[norm < 1e-12] = 1.0
    return grads / norm


def _build_state(model, stimulus, pose_arr, u, phi, residual, iters, shear,
                 friction_payload, trace) -> DeformationState:
    positions = model.rest_nodes + u
    contact_idx = np.flatnonzero(phi > 0.0).astype(np.int64)
    pts = positions[contact_idx]
    normals = _contact_normals(stimulus, pose_arr, pts) if contact_idx.size else \
        np.zeros((0, 3))
    if friction_payload is not None:
        f_idx, f_normals, f_anchors = friction_payload
        # tangential mismatch for every *final* contact vertex that was also
        # a stage-one contact (others carry no tangential spring)
        lookup = {int(v): c for c, v in enumerate(f_idx)}
        mismatch = np.zeros((contact_idx.size, 3))
        for c, v in enumerate(contact_idx):
            src = lookup.get(int(v))
            if src is None:
                continue
            w = positions[v] - f_anchors[src] - np.array([shear[0], shear[1], 0.0])
            n = f_normals[src]
            mismatch[c] = w - np.dot(w, n) * n
    else:
        mismatch = np.zeros((contact_idx.size, 3))

    state = DeformationState(
        node_displacements=u,
        pin_tips=model.pin_tips(positions),
        penetration=phi,
        solver_residual=float(residual),
        iterations=int(iters),
        contact_index=contact_idx,
        contact_normal=normals,
        contact_area=model.vertex_area[contact_idx],
        contact_point=pts,
        tangential_mismatch=mismatch,
        stimulus_world=pose_arr,
        energy_trace=tuple(trace) if trace is not None else (),
    )
    return state


def compute_wrench(state: DeformationState, params: SolverParams) -> ContactWrench:
    """Ground-truth wrench: penalty normal force plus capped tangential springs.

    The per-vertex Coulomb cap uses the Z-projected normal force, so
    sqrt(fx^2 + fy^2) <= mu * fz holds exactly for every state.
    """
    idx = state.contact_index
    if idx.size == 0:
        return ContactWrench(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, has_contact=False)
    s = params.stiffness_scale
    phi = state.penetration[idx]
    area = state.contact_area
    normals = state.contact_normal
    fn = params.kn * s * phi * area                      # magnitudes along grad
    fz_each = fn * np.maximum(0.0, -normals[:, 2])       # Z-projection, >= 0
    fz = float(fz_each.sum())

    kt = params.kt * s * area
    m = state.tangential_mismatch
    mlen = np.linalg.norm(m, axis=1)
    caps = params.mu * fz_each
    scale = np.zeros_like(mlen)
    active = mlen > 1e-15
    spring = kt[active] * mlen[active]
    scale[active] = np.minimum(spring, caps[active]) / mlen[active]
    ft = -m * scale[:, None]                             # drag force on the skin
    fx, fy = float(ft[:, 0].sum()), float(ft[:, 1].sum())

    w = phi / phi.sum()
    centroid = (state.contact_point * w[:, None]).sum(axis=0)
    return ContactWrench(fx, fy, fz, *map(float, centroid), has_contact=True)


def contact_energy_gradient(model: SensorModel, stimulus: Stimulus,
                            pose: StimulusPose, params: SolverParams,
                            u: np.ndarray):
    """Press-stage energy and analytic gradient at displacement ``u``."""
    tz0 = first_touch_offset(model, stimulus, pose)
    pose_arr = world_pose(pose, tz0 - pose.z_mm)
    energy = _Energy(model, stimulus, params, pose_arr)
    g = np.zeros_like(u)
    phi = np.zeros(model.n_vertices)
    e = energy(u, g, phi, want_grad=True)
    return e, g


def finite_diff_check(model: SensorModel, stimulus: Stimulus, pose: StimulusPose,
                      params: SolverParams | None = None, *, n_coords: int = 50,
                      h: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Samples ``n_coords`` random free coordinates of a perturbed, contact-
    active state, skipping coordinates whose vertex sits within ``10 h`` of
    the penalty kink (the energy is not differentiable exactly on the
    contact boundary).  Intended for small models (<= 500 vertices).
    """
    params = params or SolverParams()
    tz0 = first_touch_offset(model, stimulus, pose)
    pose_arr = world_pose(pose, tz0 - pose.z_mm)
    energy = _Energy(model, stimulus, params, pose_arr)

    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0xFD], np.uint64)))
    u = rng.normal(scale=0.05, size=(model.n_vertices, 3))
    u[model.boundary_mask] = 0.0

    g = np.zeros_like(u)
    phi = np.zeros(model.n_vertices)
    energy(u, g, phi, want_grad=True)

    pts = model.rest_nodes + u
    d = np.empty(model.n_vertices)
    K.sdf_points(stimulus.code, stimulus.params, pose_arr, pts, d)
    free = np.flatnonzero(~model.boundary_mask & (np.abs(d) > 10 * h))
    coords = rng.choice(free.size * 3, size=min(n_coords, free.size * 3),
                        replace=False)
    gscale = np.abs(g).max()
    g_dummy = np.zeros_like(u)
    phi_dummy = np.zeros(model.n_vertices)
    worst = 0.0
    for c in coords:
        v, axis = free[c // 3], c % 3
        u[v, axis] += h
        e_plus = energy(u, g_dummy, phi_dummy, want_grad=False)
        u[v, axis] -= 2 * h
        e_minus = energy(u, g_dummy, phi_dummy, want_grad=False)
        u[v, axis] += h
        fd = (e_plus - e_minus) / (2 * h)
        denom = max(abs(g[v, axis]), 1e-9 * max(gscale, 1e-12))
        worst = max(worst, abs(fd - g[v, axis]) / denom)
    return worst
