"""Parametric geometry of the TacTip / ViTac / ViTacTip sensor family.

A sensor is a thin elastic dome (spherical cap) observed from inside by a
wide-angle camera at the sphere centre.  Pin-type sensors carry an array of
hex-packed pins on the inner skin surface whose dark tips act as trackable
markers.  The three variants share every geometric parameter and differ only
in skin opacity and pin presence, so cross-variant comparisons isolate those
two design variables.

Frame convention: origin at the dome sphere centre, +Z from the camera
toward the dome apex.  All lengths in millimetres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace, asdict
from enum import Enum

import numpy as np

from .errors import ConfigurationError


class SkinMode(str, Enum):
    OPAQUE = "opaque"
    TRANSPARENT = "transparent"


@dataclass(frozen=True)
class SensorSpec:
    """Declarative description of one sensor variant.

    All geometric fields are shared across the three presets; only
    ``skin_mode``, ``has_pins`` and ``transparency_alpha`` differ.
    """

    dome_radius_mm: float = 20.0
    skin_thickness_mm: float = 1.0
    cap_angle_deg: float = 50.0
    mesh_edge_mm: float = 0.4
    pin_rings: int = 6
    pin_spacing_mm: float = 1.8
    pin_length_mm: float = 2.0
    marker_radius_mm: float = 0.5
    skin_mode: SkinMode = SkinMode.TRANSPARENT
    has_pins: bool = True
    transparency_alpha: float = 0.6
    camera_fov_deg: float = 160.0
    image_size_px: tuple[int, int] = (256, 256)
    ring_light_radius_mm: float = 8.0
    ring_light_intensity: float = 1.0
    external_visibility_range_mm: float = 20.0

    @property
    def pin_count(self) -> int:
        """Hex-packed pin count: 1 + 3k(k+1) for k rings, 0 without pins."""
        if not self.has_pins:
            return 0
        k = self.pin_rings
        return 1 + 3 * k * (k + 1)

    @property
    def cap_angle_rad(self) -> float:
        return math.radians(self.cap_angle_deg)

    def validate(self) -> None:
        """Raise ConfigurationError naming the first offending field."""
        if self.dome_radius_mm <= 0:
            raise ConfigurationError("dome_radius_mm must be > 0")
        if self.skin_thickness_mm <= 0:
            raise ConfigurationError("skin_thickness_mm must be > 0")
        if not 0 < self.cap_angle_deg < 90:
            raise ConfigurationError("cap_angle_deg must be in (0, 90)")
        if self.mesh_edge_mm <= 0:
            raise ConfigurationError("mesh_edge_mm must be > 0")
        if self.pin_rings < 0:
            raise ConfigurationError("pin_rings must be >= 0")
        if self.pin_spacing_mm <= 0:
            raise ConfigurationError("pin_spacing_mm must be > 0")
        if not 0 < self.pin_length_mm < self.dome_radius_mm:
            raise ConfigurationError("pin_length_mm must be in (0, dome_radius_mm)")
        if self.marker_radius_mm <= 0:
            raise ConfigurationError("marker_radius_mm must be > 0")
        if self.has_pins and not self.marker_radius_mm < self.pin_spacing_mm / 2:
            raise ConfigurationError(
                "marker_radius_mm must be smaller than pin_spacing_mm / 2"
            )
        pin_zone_arc = self.pin_rings * self.pin_spacing_mm
        cap_arc = self.dome_radius_mm * self.cap_angle_rad
        if self.has_pins and pin_zone_arc >= cap_arc:
            raise ConfigurationError(
                "pin_rings x pin_spacing_mm must lie inside the dome cap"
            )
        if not 0.0 <= self.transparency_alpha <= 1.0:
            raise ConfigurationError("transparency_alpha must be in [0, 1]")
        opaque = self.skin_mode == SkinMode.OPAQUE
        if opaque != (self.transparency_alpha == 0.0):
            raise ConfigurationError(
                "transparency_alpha must be 0 exactly when skin_mode is opaque"
            )
        if not 0 < self.camera_fov_deg <= 180:
            raise ConfigurationError("camera_fov_deg must be in (0, 180]")
        w, h = self.image_size_px
        if w < 32 or h < 32:
            raise ConfigurationError("image_size_px dimensions must be >= 32")
        if self.ring_light_radius_mm <= 0 or self.ring_light_radius_mm >= self.dome_radius_mm:
            raise ConfigurationError(
                "ring_light_radius_mm must be in (0, dome_radius_mm)"
            )
        if self.ring_light_intensity < 0:
            raise ConfigurationError("ring_light_intensity must be >= 0")
        if self.external_visibility_range_mm <= 0:
            raise ConfigurationError("external_visibility_range_mm must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["skin_mode"] = self.skin_mode.value
        d["image_size_px"] = list(self.image_size_px)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SensorSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(
                f"unknown sensor field(s): {', '.join(sorted(unknown))}"
            )
        kwargs = dict(data)
        if "skin_mode" in kwargs:
            kwargs["skin_mode"] = SkinMode(kwargs["skin_mode"])
        if "image_size_px" in kwargs:
            kwargs["image_size_px"] = tuple(int(v) for v in kwargs["image_size_px"])
        return cls(**kwargs)


def tactip_preset(**overrides) -> SensorSpec:
    """Opaque skin with pins; blind to the environment."""
    return replace(
        SensorSpec(),
        skin_mode=SkinMode.OPAQUE,
        has_pins=True,
        transparency_alpha=0.0,
        **overrides,
    )


def vitac_preset(**overrides) -> SensorSpec:
    """Transparent skin, no pins; purely visual."""
    return replace(
        SensorSpec(),
        skin_mode=SkinMode.TRANSPARENT,
        has_pins=False,
        transparency_alpha=0.6,
        **overrides,
    )


def vitactip_preset(**overrides) -> SensorSpec:
    """Transparent skin with pins; fused vision-tactile sensing."""
    return replace(
        SensorSpec(),
        skin_mode=SkinMode.TRANSPARENT,
        has_pins=True,
        transparency_alpha=0.6,
        **overrides,
    )


PRESETS = {
    "tactip": tactip_preset,
    "vitac": vitac_preset,
    "vitactip": vitactip_preset,
}


def preset_spec(mode: str, **overrides) -> SensorSpec:
    try:
        factory = PRESETS[mode]
    except KeyError:
        raise ConfigurationError(
            f"unknown sensor mode {mode!r}; expected one of {sorted(PRESETS)}"
        ) from None
    return factory(**overrides)


@dataclass(frozen=True)
class SensorModel:
    """Discretized skin dome plus pin attachment data.

    Immutable after construction; all arrays are read-only so models can be
    shared freely across threads.
    """

    rest_nodes: np.ndarray        # (V, 3) vertex positions
    triangles: np.ndarray         # (T, 3) vertex indices, outward winding
    edges: np.ndarray             # (E, 2) unique vertex pairs, i < j
    edge_rest_length: np.ndarray  # (E,)
    edge_stiffness: np.ndarray    # (E,) force per unit length
    vertex_area: np.ndarray       # (V,) lumped (barycentric) areas
    boundary_mask: np.ndarray     # (V,) True on the clamped rim ring
    pin_base_index: np.ndarray    # (P,) vertex index per pin
    pin_tip_rest: np.ndarray      # (P, 3) base + inward normal * pin_length
    spec: SensorSpec

    @property
    def n_vertices(self) -> int:
        return self.rest_nodes.shape[0]

    @property
    def n_pins(self) -> int:
        return self.pin_base_index.shape[0]

    def vertex_normals(self, positions: np.ndarray | None = None) -> np.ndarray:
        """Area-weighted outward vertex normals for the given node positions."""
        pos = self.rest_nodes if positions is None else positions
        return _vertex_normals(pos, self.triangles)

    def pin_tips(self, positions: np.ndarray) -> np.ndarray:
        """Pin tips for deformed node positions: base - outward normal * length."""
        normals = self.vertex_normals(positions)
        base = positions[self.pin_base_index]
        return base - normals[self.pin_base_index] * self.spec.pin_length_mm


def _vertex_normals(positions: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    v0 = positions[triangles[:, 0]]
    cross = np.cross(positions[triangles[:, 1]] - v0, positions[triangles[:, 2]] - v0)
    normals = np.zeros_like(positions)
    for c in range(3):
        np.add.at(normals, triangles[:, c], cross)
    norm = np.linalg.norm(normals, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return normals / norm


def _cap_mesh(radius: float, cap_angle: float, target_edge: float):
    """Triangulate a spherical cap with concentric rings of 6k vertices.

    Ring k sits at polar angle k/K * cap_angle and carries 6k vertices, so
    both radial and circumferential spacing stay near ``target_edge``
    everywhere (no pole clustering).  The construction is symmetric under
    y -> -y, which downstream mirror-symmetry checks rely on.
    """
    arc = radius * cap_angle
    n_rings = max(3, int(math.ceil(arc / target_edge)))
    ring_start = [0] * (n_rings + 1)
    verts = [(0.0, 0.0, radius)]
    for k in range(1, n_rings + 1):
        ring_start[k] = len(verts)
        alpha = cap_angle * k / n_rings
        sa, ca = math.sin(alpha), math.cos(alpha)
        count = 6 * k
        for j in range(count):
            phi = 2.0 * math.pi * j / count
            verts.append((radius * sa * math.cos(phi), radius * sa * math.sin(phi), radius * ca))

    tris = []
    for k in range(1, n_rings + 1):
        outer0, inner0 = ring_start[k], ring_start[k - 1]
        n_out, n_in = 6 * k, 6 * (k - 1)
        for s in range(6):
            outer = [outer0 + (s * k + t) % n_out for t in range(k + 1)]
            if k == 1:
                tris.append((outer[0], outer[1], 0))
                continue
            inner = [inner0 + (s * (k - 1) + t) % n_in for t in range(k)]
            for t in range(k):
                tris.append((outer[t], outer[t + 1], inner[min(t, k - 1)]))
            for t in range(k - 1):
                tris.append((outer[t + 1], inner[t + 1], inner[t]))

    nodes = np.asarray(verts, dtype=np.float64)
    triangles = np.asarray(tris, dtype=np.int32)

    # Enforce outward winding (normal pointing away from the sphere centre).
    v0 = nodes[triangles[:, 0]]
    crosses = np.cross(nodes[triangles[:, 1]] - v0, nodes[triangles[:, 2]] - v0)
    flip = np.einsum("ij,ij->i", crosses, v0) < 0
    triangles[flip] = triangles[flip][:, [0, 2, 1]]

    boundary = np.zeros(len(nodes), dtype=bool)
    boundary[ring_start[n_rings]:] = True
    return nodes, triangles, boundary


def _hex_lattice_offsets(rings: int, spacing: float) -> np.ndarray:
    """2D hex-lattice points within ``rings`` of the origin, ring by ring."""
    pts = [(0.0, 0.0)]
    ux, uy = spacing, 0.0
    vx, vy = spacing * 0.5, spacing * math.sqrt(3.0) / 2.0
    for r in range(1, rings + 1):
        # axial coordinates on hex ring r, walked deterministically
        q, s = r, 0
        directions = [(-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0), (0, 1)]
        for dq, ds in directions:
            for _ in range(r):
                pts.append((q * ux + s * vx, q * uy + s * vy))
                q, s = q + dq, s + ds
    return np.asarray(pts, dtype=np.float64)


def build_sensor(spec: SensorSpec) -> SensorModel:
    """Build the discretized skin/pin model for a sensor spec.

    Pure and deterministic: equal specs produce bit-identical models.
    Raises ConfigurationError if the spec violates an invariant or if the
    mesh cannot resolve markers (at least 4 vertices per marker-diameter
    disk around every pin site).
    """
    spec.validate()
    nodes, triangles, boundary = _cap_mesh(
        spec.dome_radius_mm, spec.cap_angle_rad, spec.mesh_edge_mm
    )

    pairs = np.vstack([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    pairs.sort(axis=1)
    edges = np.unique(pairs, axis=0).astype(np.int32)
    rest_len = np.linalg.norm(nodes[edges[:, 0]] - nodes[edges[:, 1]], axis=1)
    if not np.all(rest_len > 0):
        raise ConfigurationError("mesh_edge_mm produced a degenerate edge")

    # Membrane stiffness scales with skin thickness; the global force
    # calibration lives in SolverParams.stiffness_scale.
    stiffness = np.full(len(edges), spec.skin_thickness_mm, dtype=np.float64)

    v0 = nodes[triangles[:, 0]]
    tri_area = 0.5 * np.linalg.norm(
        np.cross(nodes[triangles[:, 1]] - v0, nodes[triangles[:, 2]] - v0), axis=1
    )
    area = np.zeros(len(nodes))
    for c in range(3):
        np.add.at(area, triangles[:, c], tri_area / 3.0)

    if spec.has_pins:
        offsets = _hex_lattice_offsets(spec.pin_rings, spec.pin_spacing_mm)
        # Exponential map onto the dome: planar radius becomes arc length.
        arc = np.linalg.norm(offsets, axis=1)
        psi = np.arctan2(offsets[:, 1], offsets[:, 0])
        alpha = arc / spec.dome_radius_mm
        targets = spec.dome_radius_mm * np.stack(
            [np.sin(alpha) * np.cos(psi), np.sin(alpha) * np.sin(psi), np.cos(alpha)],
            axis=1,
        )
        d2 = ((nodes[None, :, :] - targets[:, None, :]) ** 2).sum(axis=2)
        pin_base = np.argmin(d2, axis=1).astype(np.int32)
        if len(np.unique(pin_base)) != len(pin_base):
            raise ConfigurationError(
                "pin_spacing_mm too small for mesh_edge_mm: pins collide on vertices"
            )
        normals = _vertex_normals(nodes, triangles)
        tips = nodes[pin_base] - normals[pin_base] * spec.pin_length_mm

        # Marker resolvability: >= 4 mesh vertices within a marker-diameter
        # disk centred on every pin site.
        for b in pin_base:
            near = ((nodes - nodes[b]) ** 2).sum(axis=1) <= spec.marker_radius_mm**2
            if near.sum() < 4:
                raise ConfigurationError(
                    "mesh_edge_mm too coarse: fewer than 4 vertices per marker diameter"
                )
    else:
        pin_base = np.zeros(0, dtype=np.int32)
        tips = np.zeros((0, 3), dtype=np.float64)

    for arr in (nodes, triangles, edges, rest_len, stiffness, area, boundary, pin_base, tips):
        arr.setflags(write=False)

    return SensorModel(
        rest_nodes=nodes,
        triangles=triangles,
        edges=edges,
        edge_rest_length=rest_len,
        edge_stiffness=stiffness,
        vertex_area=area,
        boundary_mask=boundary,
        pin_base_index=pin_base,
        pin_tip_rest=tips,
        spec=spec,
    )
