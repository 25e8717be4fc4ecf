"""Internal-camera rendering: ring-lit skin shading, marker disks, and
transparent-skin pass-through of the external scene.

The camera sits at the dome sphere centre looking along +Z through an
equidistant fisheye (r = f * theta).  A frame is the sum of an internal term
(Lambertian skin shading under the ring light, with pin-tip markers drawn as
dark disks) and, for transparent skins, a transmitted term: straight-ray
continuation to the stimulus surface or the background plane, scaled by
``transparency_alpha * ambient_light`` and linearly faded to zero at the
external visibility range.  Rendering is deterministic; optional Gaussian
pixel noise is off by default and seeded when enabled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from PIL import Image

from . import _kernels as K
from .errors import ConfigurationError, ContractError
from .mechanics import DeformationState, Stimulus
from .sensor import SensorModel, SensorSpec, SkinMode


@dataclass(frozen=True)
class SolidColor:
    rgb: tuple[float, float, float] = (0.78, 0.74, 0.70)


@dataclass(frozen=True)
class Checker:
    rgb_a: tuple[float, float, float] = (0.85, 0.85, 0.85)
    rgb_b: tuple[float, float, float] = (0.25, 0.25, 0.30)
    cell_mm: float = 5.0


@dataclass(frozen=True)
class TexturedPlane:
    path: str
    extent_mm: float = 40.0  # width of the image mapped onto the plane


@dataclass(frozen=True)
class PlacedStimulus:
    """A stimulus with its solved world transform (cos, sin, tx, ty, tz)."""

    stimulus: Stimulus
    world: np.ndarray

    @classmethod
    def from_state(cls, stimulus: Stimulus, state: DeformationState):
        return cls(stimulus=stimulus, world=np.asarray(state.stimulus_world))


@dataclass(frozen=True)
class VisualScene:
    """External world seen through a transparent skin."""

    background: object = SolidColor()
    background_distance_mm: float = 10.0
    ambient_light: float = 1.0
    stimulus: PlacedStimulus | None = None

    def validate(self) -> None:
        if self.background_distance_mm <= 0:
            raise ConfigurationError("background_distance_mm must be > 0")
        if not 0.0 <= self.ambient_light <= 2.0:
            raise ConfigurationError("ambient_light must be in [0, 2]")


@dataclass(frozen=True)
class RenderConfig:
    n_ring_lights: int = 12
    skin_albedo: float = 0.85
    transparency_reflect_loss: float = 0.7
    marker_rgb: tuple[float, float, float] = (0.04, 0.04, 0.05)
    housing_rgb: tuple[float, float, float] = (0.05, 0.05, 0.06)
    stimulus_albedo: tuple[float, float, float] = (0.30, 0.33, 0.42)
    proximity_far_weight: float = 0.35
    proximity_length_mm: float = 2.5
    noise_enabled: bool = False
    noise_sigma: float = 1.5
    noise_seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RenderConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(
                f"unknown render field(s): {', '.join(sorted(unknown))}"
            )
        kwargs = dict(data)
        for key in ("marker_rgb", "housing_rgb", "stimulus_albedo"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class Frame:
    width: int
    height: int
    pixels: np.ndarray  # (H, W, 3) uint8

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width, 3):
            raise ContractError("pixel buffer shape does not match frame size")

    def to_png(self, path) -> None:
        Image.fromarray(self.pixels, mode="RGB").save(path, format="PNG")

    @classmethod
    def from_png(cls, path) -> "Frame":
        arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)
        return cls(width=arr.shape[1], height=arr.shape[0], pixels=arr)

    def as_float(self) -> np.ndarray:
        return self.pixels.astype(np.float64)


def focal_px(spec: SensorSpec) -> float:
    w, h = spec.image_size_px
    return (min(w, h) / 2.0) / (math.radians(spec.camera_fov_deg) / 2.0)


def project(spec: SensorSpec, point) -> tuple[float, float, bool]:
    """Equidistant fisheye projection of a sensor-frame point.

    Returns (u, v, visible); ``visible`` is False for points behind the
    camera or beyond the field of view.  Continuous image coordinates, with
    pixel (row i, col j) centred at (u, v) = (j + 0.5, i + 0.5).
    """
    uv, vis = project_points(spec, np.asarray(point, dtype=np.float64)[None, :])
    return float(uv[0, 0]), float(uv[0, 1]), bool(vis[0])


def project_points(spec: SensorSpec, points: np.ndarray):
    pts = np.asarray(points, dtype=np.float64)
    w, h = spec.image_size_px
    f = focal_px(spec)
    rho = np.linalg.norm(pts, axis=1)
    rho_safe = np.where(rho == 0, 1.0, rho)
    theta = np.arccos(np.clip(pts[:, 2] / rho_safe, -1.0, 1.0))
    planar = np.hypot(pts[:, 0], pts[:, 1])
    planar_safe = np.where(planar == 0, 1.0, planar)
    r = f * theta
    u = w / 2.0 + r * pts[:, 0] / planar_safe
    v = h / 2.0 + r * pts[:, 1] / planar_safe
    on_axis = planar == 0
    u[on_axis] = w / 2.0
    v[on_axis] = h / 2.0
    visible = (theta <= math.radians(spec.camera_fov_deg) / 2.0) & (rho > 0)
    return np.stack([u, v], axis=1), visible


def unproject(spec: SensorSpec, u, v) -> np.ndarray:
    """Unit ray direction for continuous image coordinates (u, v)."""
    w, h = spec.image_size_px
    f = focal_px(spec)
    du = np.asarray(u, dtype=np.float64) - w / 2.0
    dv = np.asarray(v, dtype=np.float64) - h / 2.0
    r = np.hypot(du, dv)
    theta = r / f
    r_safe = np.where(r == 0, 1.0, r)
    sin_t = np.sin(theta)
    return np.stack(
        [sin_t * du / r_safe, sin_t * dv / r_safe, np.cos(theta)], axis=-1
    )


def _ray_grid(spec: SensorSpec):
    w, h = spec.image_size_px
    us, vs = np.meshgrid(np.arange(w) + 0.5, np.arange(h) + 0.5)
    dirs = unproject(spec, us, vs)
    f = focal_px(spec)
    in_fov = np.hypot(us - w / 2.0, vs - h / 2.0) <= f * math.radians(
        spec.camera_fov_deg
    ) / 2.0 + 1e-9
    return dirs, in_fov


def _background_rgb(background, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if isinstance(background, SolidColor):
        rgb = np.empty((x.size, 3))
        rgb[:] = background.rgb
        return rgb
    if isinstance(background, Checker):
        parity = (
            np.floor(x / background.cell_mm) + np.floor(y / background.cell_mm)
        ).astype(np.int64) % 2
        a = np.asarray(background.rgb_a)
        b = np.asarray(background.rgb_b)
        return np.where(parity[:, None] == 0, a[None, :], b[None, :])
    if isinstance(background, TexturedPlane):
        img = np.asarray(Image.open(background.path).convert("RGB"), np.float64) / 255.0
        ih, iw = img.shape[:2]
        scale = iw / background.extent_mm
        px = np.clip((x + background.extent_mm / 2.0) * scale, 0, iw - 1)
        py = np.clip((y + background.extent_mm / 2.0) * scale, 0, ih - 1)
        return img[py.astype(np.int64), px.astype(np.int64)]
    raise ConfigurationError(f"unknown background type {type(background).__name__}")


def _draw_disk(rgb: np.ndarray, cu: float, cv: float, radius: float, color):
    """Alpha-blend a soft-edged disk into the float image buffer."""
    h, w = rgb.shape[:2]
    x0 = max(int(math.floor(cu - radius - 1.0)), 0)
    x1 = min(int(math.ceil(cu + radius + 1.0)) + 1, w)
    y0 = max(int(math.floor(cv - radius - 1.0)), 0)
    y1 = min(int(math.ceil(cv + radius + 1.0)) + 1, h)
    if x0 >= x1 or y0 >= y1:
        return
    xs = np.arange(x0, x1) + 0.5
    ys = np.arange(y0, y1) + 0.5
    dist = np.hypot(xs[None, :] - cu, ys[:, None] - cv)
    cover = np.clip(radius - dist + 0.5, 0.0, 1.0)
    patch = rgb[y0:y1, x0:x1]
    col = np.asarray(color)
    rgb[y0:y1, x0:x1] = patch * (1 - cover[..., None]) + col * cover[..., None]


def render(model: SensorModel, deformation: DeformationState, scene: VisualScene,
           spec: SensorSpec, config: RenderConfig | None = None) -> Frame:
    """Render one camera frame for a contact state.

    ``spec`` controls the optical pipeline (opacity, pins, fov) and may
    differ from ``model.spec`` so the same solved geometry can be imaged in
    every sensor mode; the mesh geometry always comes from ``model``.
    """
    config = config or RenderConfig()
    scene.validate()
    u = deformation.node_displacements
    if u.shape != model.rest_nodes.shape:
        raise ContractError(
            "deformation does not match model: "
            f"{u.shape} displacements for {model.rest_nodes.shape} nodes"
        )
    w, h = spec.image_size_px
    positions = model.rest_nodes + u
    normals = model.vertex_normals(positions)

    uv, _ = project_points(spec, positions)
    rho = np.linalg.norm(positions, axis=1)

    pix_pos = np.zeros((h, w, 3))
    pix_nrm = np.zeros((h, w, 3))
    pix_rho = np.full((h, w), np.inf)
    pix_mask = np.zeros((h, w), np.uint8)
    K.rasterize(
        np.ascontiguousarray(uv), rho, positions,
        np.ascontiguousarray(normals), model.triangles,
        pix_pos, pix_nrm, pix_rho, pix_mask,
    )
    mask = pix_mask.astype(bool)

    rgb = np.empty((h, w, 3))
    rgb[:] = config.housing_rgb

    # --- internal term: ring-lit Lambertian shading of the inner surface
    p = pix_pos[mask]
    n_in = -pix_nrm[mask]
    n_in /= np.maximum(np.linalg.norm(n_in, axis=1, keepdims=True), 1e-12)
    radius = model.spec.dome_radius_mm
    angles = 2.0 * math.pi * np.arange(config.n_ring_lights) / config.n_ring_lights
    lights = np.stack(
        [spec.ring_light_radius_mm * np.cos(angles),
         spec.ring_light_radius_mm * np.sin(angles),
         np.zeros_like(angles)], axis=1,
    )
    shade = np.zeros(p.shape[0])
    for light in lights:
        to_l = light[None, :] - p
        d2 = (to_l**2).sum(axis=1)
        cosine = np.maximum((n_in * to_l).sum(axis=1) / np.sqrt(d2), 0.0)
        shade += cosine * radius**2 / d2
    shade *= spec.ring_light_intensity / config.n_ring_lights
    reflectance = config.skin_albedo * (
        1.0 - config.transparency_reflect_loss * spec.transparency_alpha
    )
    internal = shade[:, None] * reflectance

    # --- transmitted term: straight rays through the transparent skin
    transparent = (
        spec.skin_mode == SkinMode.TRANSPARENT
        and spec.transparency_alpha > 0.0
        and scene.ambient_light > 0.0
    )
    if transparent:
        dirs, _ = _ray_grid(spec)
        d = dirs[mask]
        fade = spec.external_visibility_range_mm
        z_bg = radius + scene.background_distance_mm
        dz = d[:, 2]
        t_bg = np.where(dz > 1e-9, (z_bg - p[:, 2]) / np.maximum(dz, 1e-9), np.inf)

        t_hit = np.full(p.shape[0], np.inf)
        if scene.stimulus is not None:
            t_max = np.minimum(t_bg, fade)
            K.march_rays(
                np.ascontiguousarray(p), np.ascontiguousarray(d),
                scene.stimulus.stimulus.code, scene.stimulus.stimulus.params,
                np.ascontiguousarray(scene.stimulus.world, dtype=np.float64),
                t_max, t_hit,
            )

        radiance = np.zeros((p.shape[0], 3))
        dist = np.full(p.shape[0], np.inf)
        hit_stim = t_hit <= t_bg
        if np.any(hit_stim):
            far = config.proximity_far_weight
            prox = far + (1.0 - far) * np.exp(
                -t_hit[hit_stim] / config.proximity_length_mm
            )
            radiance[hit_stim] = np.asarray(config.stimulus_albedo) * prox[:, None]
            dist[hit_stim] = t_hit[hit_stim]
        hit_bg = ~hit_stim & (t_bg < fade)
        if np.any(hit_bg):
            bg_pts = p[hit_bg] + t_bg[hit_bg, None] * d[hit_bg]
            radiance[hit_bg] = _background_rgb(
                scene.background, bg_pts[:, 0], bg_pts[:, 1]
            )
            dist[hit_bg] = t_bg[hit_bg]
        atten = np.clip(1.0 - dist / fade, 0.0, 1.0)
        transmitted = (
            spec.transparency_alpha * scene.ambient_light * radiance * atten[:, None]
        )
    else:
        transmitted = 0.0

    rgb[mask] = internal + transmitted

    # --- markers: dark disks at projected pin tips (pins occlude)
    if spec.has_pins and deformation.pin_tips.shape[0]:
        tips = deformation.pin_tips
        tip_uv, tip_vis = project_points(spec, tips)
        tip_rho = np.linalg.norm(tips, axis=1)
        f = focal_px(spec)
        order = np.argsort(-tip_rho, kind="stable")
        for i in order:
            if not tip_vis[i]:
                continue
            r_px = f * spec.marker_radius_mm / tip_rho[i]
            _draw_disk(rgb, tip_uv[i, 0], tip_uv[i, 1], r_px, config.marker_rgb)

    if config.noise_enabled:
        rng = np.random.Generator(
            np.random.Philox(key=np.array([config.noise_seed, 0xAE], np.uint64))
        )
        rgb += rng.normal(scale=config.noise_sigma / 255.0, size=rgb.shape)

    pixels = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    return Frame(width=w, height=h, pixels=pixels)
