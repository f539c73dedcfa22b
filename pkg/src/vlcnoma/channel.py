"""Indoor optical channel: Lambertian LoS plus first-order wall reflections.

APs face straight down and photodiodes straight up. Reflecting surfaces are
tiled into square patches whose centres stand in for the surface integral.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np

from .config import SimConfig

AP_NORMAL = np.array([0.0, 0.0, -1.0])
PD_NORMAL = np.array([0.0, 0.0, 1.0])


def lambertian_order(semi_angle_rad: float) -> float:
    """Lambertian mode number of an LED with the given half-power semi-angle."""
    if semi_angle_rad <= 0:
        raise ValueError("semi-angle must be positive")
    c = math.cos(semi_angle_rad)
    if semi_angle_rad >= math.pi / 2 or c <= 0:
        raise ValueError("semi-angle must be below pi/2")
    m = -math.log(2.0) / math.log(c)
    # cos() of a rounded angle is off by an ulp or so; don't let that turn
    # an integer order (60 degrees -> 1) into 0.9999999999999997
    return float(round(m)) if abs(m - round(m)) < 1e-9 * max(1.0, m) else m


@dataclass(frozen=True)
class Radiometry:
    lambertian_m: float
    pd_area_m2: float
    fov_rad: float
    filter_gain: float
    concentrator_gain: float
    responsivity: float

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "Radiometry":
        rx = cfg.receiver
        return cls(
            lambertian_m=lambertian_order(math.radians(cfg.aps.semi_angle_deg)),
            pd_area_m2=rx.pd_area_m2,
            fov_rad=math.radians(rx.fov_deg),
            filter_gain=rx.filter_gain,
            concentrator_gain=rx.concentrator_gain,
            responsivity=rx.responsivity_a_per_w,
        )

    @property
    def cos_fov(self) -> float:
        return math.cos(self.fov_rad)


@dataclass(frozen=True)
class Room:
    length: float
    width: float
    height: float
    rho_wall: float = 0.8
    rho_floor: float = 0.3
    rho_ceiling: float = 0.8
    patch_edge: float = 0.25
    reflect_floor: bool = False
    reflect_ceiling: bool = False

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "Room":
        r = cfg.room
        return cls(r.length_m, r.width_m, r.height_m, r.wall_reflectivity,
                   r.floor_reflectivity, r.ceiling_reflectivity, r.patch_edge_m,
                   r.reflect_floor, r.reflect_ceiling)

    @cached_property
    def patches(self) -> "Patches":
        return _tile_surfaces(self)


@dataclass(frozen=True)
class Patches:
    centre: np.ndarray      # (P, 3)
    normal: np.ndarray      # (P, 3), pointing into the room
    area: np.ndarray        # (P,)
    rho: np.ndarray         # (P,)
    # wall patches only (zeros for floor/ceiling): horizontal tangent,
    # half-width along it, and vertical extent
    tangent: np.ndarray     # (P, 3)
    half_width: np.ndarray  # (P,)
    z_lo: np.ndarray        # (P,)
    z_hi: np.ndarray        # (P,)
    is_wall: np.ndarray     # (P,) bool

    def __len__(self) -> int:
        return len(self.area)


def _grid(extent: float, edge: float) -> tuple[np.ndarray, float]:
    n = max(1, int(round(extent / edge)))
    step = extent / n
    return (np.arange(n) + 0.5) * step, step


def _tile_surfaces(room: Room) -> Patches:
    parts = []

    def add(pts, normal, tangent, half_width, dz, area, rho, wall):
        n = len(pts)
        parts.append((pts, np.tile(normal, (n, 1)), np.full(n, area), np.full(n, rho),
                      np.tile(tangent, (n, 1)), np.full(n, half_width),
                      pts[:, 2] - dz / 2, pts[:, 2] + dz / 2, np.full(n, wall)))

    L, W, H, e = room.length, room.width, room.height, room.patch_edge
    xs, dx = _grid(L, e)
    ys, dy = _grid(W, e)
    zs, dz = _grid(H, e)
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    for x0, nx in ((0.0, 1.0), (L, -1.0)):
        pts = np.stack([np.full(yy.size, x0), yy.ravel(), zz.ravel()], axis=1)
        add(pts, [nx, 0, 0], [0, 1, 0], dy / 2, dz, dy * dz, room.rho_wall, True)
    xx, zz = np.meshgrid(xs, zs, indexing="ij")
    for y0, ny in ((0.0, 1.0), (W, -1.0)):
        pts = np.stack([xx.ravel(), np.full(xx.size, y0), zz.ravel()], axis=1)
        add(pts, [0, ny, 0], [1, 0, 0], dx / 2, dz, dx * dz, room.rho_wall, True)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    if room.reflect_floor:
        pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
        add(pts, [0, 0, 1], [0, 0, 0], 0.0, 0.0, dx * dy, room.rho_floor, False)
    if room.reflect_ceiling:
        pts = np.stack([xx.ravel(), yy.ravel(), np.full(xx.size, H)], axis=1)
        add(pts, [0, 0, -1], [0, 0, 0], 0.0, 0.0, dx * dy, room.rho_ceiling, False)
    if not parts:
        raise ValueError("room has no reflecting patches")
    cols = [np.concatenate(c) for c in zip(*parts)]
    cols[:5] = [np.asarray(c, float) for c in cols[:5]]
    return Patches(*cols)


def incidence_cosines(ap_pos, ue_pos) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Distance, cos(irradiance) and cos(incidence) for down/up facing optics.

    Broadcasts over leading axes of ``ap_pos`` and ``ue_pos``.
    """
    v = np.asarray(ue_pos, float) - np.asarray(ap_pos, float)
    d = np.linalg.norm(v, axis=-1)
    if np.any(d == 0):
        raise ValueError("AP and receiver coincide")
    cos_phi = (v @ AP_NORMAL) / d
    cos_psi = (-v @ PD_NORMAL) / d
    return d, cos_phi, cos_psi


def los_gain(ap_pos, ue_pos, rad: Radiometry) -> np.ndarray | float:
    d, cos_phi, cos_psi = incidence_cosines(ap_pos, ue_pos)
    visible = (cos_phi > 0) & (cos_psi > 0) & (cos_psi >= rad.cos_fov)
    gain = ((rad.lambertian_m + 1) * rad.pd_area_m2 / (2 * np.pi * d**2)
            * np.clip(cos_phi, 0, None) ** rad.lambertian_m
            * rad.filter_gain * rad.concentrator_gain * cos_psi)
    out = np.where(visible, gain, 0.0)
    return float(out) if out.ndim == 0 else out


def _ap_to_patch(ap_pos: np.ndarray, patches: Patches, rad: Radiometry) -> np.ndarray:
    """rho * cos^m(phi1) cos(psi1) / d1^2 at each patch centre, shape (A, P)."""
    v = patches.centre[None, :, :] - ap_pos[:, None, :]
    d1 = np.linalg.norm(v, axis=-1)
    safe = np.where(d1 > 0, d1, 1.0)
    cos_phi1 = np.clip((v @ AP_NORMAL) / safe, 0, None)
    cos_psi1 = np.clip(-np.einsum("apk,pk->ap", v, patches.normal) / safe, 0, None)
    w = patches.rho * cos_phi1**rad.lambertian_m * cos_psi1 / safe**2
    return np.where(d1 > 0, w, 0.0)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _arctan_integral(p, q, s):
    """Integral of 1 / (s^2 + y^2) over [p, q]; zero where q <= p."""
    return np.where(q > p, (np.arctan(q / s) - np.arctan(p / s)) / s, 0.0)


def _asinh_integral(p, q, r):
    """Integral of 1 / sqrt(r^2 + y^2) over [p, q]; zero where q <= p."""
    return np.where(q > p, np.arcsinh(q / r) - np.arcsinh(p / r), 0.0)


def _log_integral(p, q, s):
    """Integral of y / (s^2 + y^2) over [p, q]; zero where q <= p."""
    return np.where(q > p, 0.5 * np.log((s**2 + q**2) / (s**2 + p**2)), 0.0)


def _atan_over_a_integral(p, q, r, c):
    """Integral of atan(c / a) / a with a = sqrt(r^2 + y^2) over [p, q].

    With y = r sinh(t) this is the integral of atan(c / (r cosh t)) dt, a
    smooth bounded integrand handled by Gauss-Legendre.
    """
    t0 = np.arcsinh(p / r)
    t1 = np.arcsinh(np.maximum(q, p) / r)
    half = 0.5 * (t1 - t0)
    mid = 0.5 * (t1 + t0)
    t = mid[..., None] + half[..., None] * _GL_NODES
    vals = np.arctan(c[..., None] / (r[..., None] * np.cosh(t)))
    return half * (vals @ _GL_WEIGHTS)


def _wall_receiver_integral(r, p, q, c0, c1, rad: Radiometry, moment: bool = False):
    """Exact integral of cos(phi2) cos(psi2) 1[psi2 <= FOV] / d2^2 over a wall rectangle.

    ``r`` is the receiver's distance from the wall plane, ``[p, q]`` the
    rectangle's extent along the wall and ``[c0, c1]`` its height, both relative
    to the receiver. Integrating over height first gives
    r/2 * [1/(a^2 + l^2) - 1/(a^2 + c1^2)] with a^2 = r^2 + y^2 and l the lower
    visible height max(c0, a cot(FOV)); the remaining integrals along the wall
    are arctangents.

    With ``moment=True`` also returns the integrals of the same integrand
    weighted by the position along the wall and by the height, both relative
    to the receiver.
    """
    r = np.maximum(r, 1e-9)
    kappa = 1.0 / math.tan(rad.fov_rad)
    sin2 = math.sin(rad.fov_rad) ** 2
    c0 = np.maximum(c0, 0.0)
    c1 = np.maximum(c1, 0.0)
    y1 = np.sqrt(np.clip((c1 / kappa) ** 2 - r**2, 0, None))  # visible band |y| < y1
    y0 = np.minimum(np.sqrt(np.clip((c0 / kappa) ** 2 - r**2, 0, None)), y1)
    s0 = np.sqrt(r**2 + c0**2)
    s1 = np.sqrt(r**2 + c1**2)

    def seg(lo, hi):
        return np.maximum(p, lo), np.minimum(q, hi)

    flat = seg(-y0, y0)  # lower limit is the patch bottom
    cones = (seg(-y1, -y0), seg(y0, y1))  # lower limit on the FOV cone
    band = seg(-y1, y1)

    zeroth = 0.5 * r * (_arctan_integral(*flat, s0)
                        + sin2 * sum(_arctan_integral(*c, r) for c in cones)
                        - _arctan_integral(*band, s1))
    if not moment:
        return zeroth
    along = 0.5 * r * (_log_integral(*flat, s0)
                       + sin2 * sum(_log_integral(*c, r) for c in cones)
                       - _log_integral(*band, s1))
    cone_coef = 0.5 * (kappa / (1 + kappa**2) - math.atan(kappa))
    first = r * (
        0.5 * _atan_over_a_integral(*band, r, c1) - 0.5 * c1 * _arctan_integral(*band, s1)
        - 0.5 * _atan_over_a_integral(*flat, r, c0) + 0.5 * c0 * _arctan_integral(*flat, s0)
        + cone_coef * sum(_asinh_integral(*c, r) for c in cones)
    )
    return zeroth, along, first


def _patch_to_user(ue_pos: np.ndarray, patches: Patches, rad: Radiometry):
    """Receiver-side factor of each patch integrated over its area, shape (P, U).

    Also returns the first moments of that factor along the wall and in height
    about each patch centre (zero for floor/ceiling patches).
    """
    v = ue_pos[None, :, :] - patches.centre[:, None, :]
    # walls: closed-form integral over the rectangle
    r = np.einsum("puk,pk->pu", v, patches.normal)
    along = np.einsum("puk,pk->pu", v, patches.tangent)
    hw = patches.half_width[:, None]
    h = ue_pos[None, :, 2]
    b0, bt, bz = _wall_receiver_integral(r, -hw - along, hw - along,
                                         patches.z_lo[:, None] - h, patches.z_hi[:, None] - h,
                                         rad, moment=True)
    inside = (r >= 0) & patches.is_wall[:, None]
    b0 = np.where(inside, b0, 0.0)
    # moments about the patch centre rather than the receiver
    bt = np.where(inside, bt + along * b0, 0.0)
    bz = np.where(inside, bz + v[..., 2] * b0, 0.0)
    # floor / ceiling: centre value times area
    d2 = np.linalg.norm(v, axis=-1)
    safe = np.where(d2 > 0, d2, 1.0)
    cos_phi2 = np.clip(r / safe, 0, None)
    cos_psi2 = (-v @ PD_NORMAL) / safe
    in_fov = (cos_psi2 > 0) & (cos_psi2 >= rad.cos_fov) & (d2 > 0)
    flat = np.where(in_fov, patches.area[:, None] * cos_phi2 * cos_psi2 / safe**2, 0.0)
    return np.where(patches.is_wall[:, None], b0, flat), bt, bz


def _ap_factors(ap_pos: np.ndarray, patches: Patches, rad: Radiometry):
    """AP-side factor at patch centres and its derivatives along the wall and in height.

    Each output has shape (A, P); derivatives are central differences.
    """
    step = 1e-5
    centre = _ap_to_patch(ap_pos, patches, rad)
    derivs = []
    for offset in (patches.tangent, np.array([0.0, 0.0, 1.0])):
        up = _ap_to_patch_at(ap_pos, patches, rad, step * offset)
        down = _ap_to_patch_at(ap_pos, patches, rad, -step * offset)
        derivs.append(np.where(patches.is_wall, (up - down) / (2 * step), 0.0))
    return centre, derivs[0], derivs[1]


def _ap_to_patch_at(ap_pos, patches: Patches, rad: Radiometry, shift):
    moved = dataclasses.replace(patches, centre=patches.centre + shift)
    return _ap_to_patch(ap_pos, moved, rad)


def _nlos_prefactor(rad: Radiometry) -> float:
    return ((rad.lambertian_m + 1) * rad.pd_area_m2 * rad.filter_gain
            * rad.concentrator_gain / (2 * np.pi**2))


def nlos_first_order_gain(ap_pos, ue_pos, room: Room, rad: Radiometry) -> float:
    """First-order reflected DC gain between one AP and one receiver."""
    ap = np.asarray(ap_pos, float)[None, :]
    ue = np.asarray(ue_pos, float)[None, :]
    a0, at, az = _ap_factors(ap, room.patches, rad)
    b0, bt, bz = _patch_to_user(ue, room.patches, rad)
    return float(_nlos_prefactor(rad) * (a0 @ b0 + at @ bt + az @ bz)[0, 0])


@dataclass(frozen=True)
class ChannelMatrix:
    h_los: np.ndarray
    h_nlos: np.ndarray
    h_total: np.ndarray
    gain: np.ndarray  # channel power gain (R * H)^2, A^2, shape (A, U)


class ChannelModel:
    """Builds channel matrices for a fixed AP set.

    AP-side reflection factors are computed once. With ``table_step`` set, the
    reflected gain is read from a per-AP table over the receiver plane by
    bilinear interpolation instead of being summed over patches for every
    receiver; the table itself comes from the exact patch sum.
    """

    def __init__(self, ap_pos: np.ndarray, room: Room, rad: Radiometry,
                 table_step: float | None = None, ue_height: float | None = None):
        self.ap_pos = np.asarray(ap_pos, float)
        self.room = room
        self.rad = rad
        a0, at, az = _ap_factors(self.ap_pos, room.patches, rad)
        k = _nlos_prefactor(rad)
        self._ap_terms = (k * a0, k * at, k * az)
        self._table = None
        if table_step is not None:
            if ue_height is None:
                raise ValueError("a reflection table needs the receiver height")
            self._table = self._make_table(table_step, ue_height)

    @classmethod
    def from_config(cls, cfg: SimConfig) -> "ChannelModel":
        """Shared instance per geometry; the model is read-only after construction."""
        aps = tuple(map(tuple, ap_positions(cfg).tolist()))
        return _cached_model(aps, Room.from_config(cfg), Radiometry.from_config(cfg),
                             cfg.room.nlos_table_step_m, cfg.receiver.height_m)

    def nlos_exact(self, ue: np.ndarray, chunk: int = 256) -> np.ndarray:
        out = np.empty((len(self.ap_pos), len(ue)))
        a0, at, az = self._ap_terms
        for i in range(0, len(ue), chunk):
            b0, bt, bz = _patch_to_user(ue[i:i + chunk], self.room.patches, self.rad)
            out[:, i:i + chunk] = a0 @ b0 + at @ bt + az @ bz
        return out

    def _make_table(self, step: float, height: float):
        nx = max(1, int(math.ceil(self.room.length / step)))
        ny = max(1, int(math.ceil(self.room.width / step)))
        xs = np.linspace(0.0, self.room.length, nx + 1)
        ys = np.linspace(0.0, self.room.width, ny + 1)
        xx, yy = np.meshgrid(xs, ys, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel(), np.full(xx.size, height)])
        values = self.nlos_exact(pts).reshape(len(self.ap_pos), nx + 1, ny + 1)
        return xs, ys, values

    def _nlos_from_table(self, ue: np.ndarray) -> np.ndarray:
        xs, ys, values = self._table
        fx = np.clip(ue[:, 0] / xs[-1], 0, 1) * (len(xs) - 1)
        fy = np.clip(ue[:, 1] / ys[-1], 0, 1) * (len(ys) - 1)
        i = np.minimum(fx.astype(int), len(xs) - 2) if len(xs) > 1 else np.zeros(len(ue), int)
        j = np.minimum(fy.astype(int), len(ys) - 2) if len(ys) > 1 else np.zeros(len(ue), int)
        tx, ty = fx - i, fy - j
        return (values[:, i, j] * (1 - tx) * (1 - ty) + values[:, i + 1, j] * tx * (1 - ty)
                + values[:, i, j + 1] * (1 - tx) * ty + values[:, i + 1, j + 1] * tx * ty)

    def build(self, ue_pos: np.ndarray) -> ChannelMatrix:
        ue = np.asarray(ue_pos, float).reshape(-1, 3)
        if len(ue) == 0:
            empty = np.zeros((len(self.ap_pos), 0))
            return ChannelMatrix(empty, empty.copy(), empty.copy(), empty.copy())
        h_los = los_gain(self.ap_pos[:, None, :], ue[None, :, :], self.rad)
        h_nlos = self.nlos_exact(ue) if self._table is None else self._nlos_from_table(ue)
        h_total = h_los + h_nlos
        return ChannelMatrix(h_los, h_nlos, h_total, (self.rad.responsivity * h_total) ** 2)


@lru_cache(maxsize=8)
def _cached_model(aps, room, rad, step, height) -> ChannelModel:
    return ChannelModel(np.array(aps), room, rad, step, height)


def build_channel_matrix(ap_pos, ue_pos, room: Room, rad: Radiometry) -> ChannelMatrix:
    return ChannelModel(ap_pos, room, rad).build(ue_pos)


def ap_positions(cfg: SimConfig) -> np.ndarray:
    xy = np.asarray(cfg.aps.positions_m, float).reshape(-1, 2)
    return np.column_stack([xy, np.full(len(xy), cfg.room.height_m)])
