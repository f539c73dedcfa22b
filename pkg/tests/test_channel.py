import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlcnoma.channel import (ChannelModel, Radiometry, Room, build_channel_matrix,
                             incidence_cosines, lambertian_order, los_gain,
                             nlos_first_order_gain)
from vlcnoma.config import SimConfig

CFG = SimConfig()
RAD = Radiometry.from_config(CFG)
ROOM = Room.from_config(CFG)
H_UE = CFG.receiver.height_m
NADIR_LOS = 2 * 1e-4 / (2 * math.pi * 2.15**2)


def ue(x, y):
    return np.array([x, y, H_UE])


def ap(x, y):
    return np.array([x, y, 3.0])


def brute_nlos(ap_pos, ue_pos, edge=0.01, rho=0.8, L=4.0, W=8.0, H=3.0):
    """Plain midpoint sum over fine wall patches, written independently of the module."""
    m, cos_fov = RAD.lambertian_m, math.cos(RAD.fov_rad)
    total = 0.0
    walls = [((0, None), W, np.array([1.0, 0, 0])), ((L, None), W, np.array([-1.0, 0, 0])),
             ((None, 0), L, np.array([0, 1.0, 0])), ((None, W), L, np.array([0, -1.0, 0]))]
    for (fx, fy), extent, normal in walls:
        na, nz = int(round(extent / edge)), int(round(H / edge))
        a = (np.arange(na) + 0.5) * extent / na
        z = (np.arange(nz) + 0.5) * H / nz
        A, Z = (g.ravel() for g in np.meshgrid(a, z, indexing="ij"))
        if fx is not None:
            pts = np.column_stack([np.full_like(A, fx), A, Z])
        else:
            pts = np.column_stack([A, np.full_like(A, fy), Z])
        v1 = pts - ap_pos
        d1 = np.linalg.norm(v1, axis=1)
        v2 = ue_pos - pts
        d2 = np.linalg.norm(v2, axis=1)
        cpsi2 = -v2[:, 2] / d2
        term = (np.clip(-v1[:, 2] / d1, 0, None) ** m * np.clip(-(v1 @ normal) / d1, 0, None)
                * np.clip((v2 @ normal) / d2, 0, None) * cpsi2 * (cpsi2 >= cos_fov)
                / (d1**2 * d2**2))
        total += rho * term.sum() * (extent / na) * (H / nz)
    return (m + 1) * RAD.pd_area_m2 / (2 * math.pi**2) * total


# ---------------------------------------------------------------- Lambertian
def test_lambertian_order_60_deg_is_one():
    assert lambertian_order(math.radians(60)) == 1.0


def test_lambertian_order_30_deg():
    assert lambertian_order(math.radians(30)) == pytest.approx(4.8188, abs=1e-4)


@pytest.mark.parametrize("bad", [0.0, -0.1, math.pi / 2, 2.0])
def test_lambertian_order_rejects_out_of_domain(bad):
    with pytest.raises(ValueError):
        lambertian_order(bad)


# ----------------------------------------------------------------------- LoS
def test_nadir_los_gain_matches_hand_value():
    g = los_gain(ap(2, 4), ue(2, 4), RAD)
    assert g == pytest.approx(6.886e-6, rel=1e-3)
    assert g == pytest.approx(NADIR_LOS, rel=1e-12)


def test_los_fov_cutoff():
    # horizontal offset with tan(psi) = r / 2.15; just inside and just outside 70 degrees
    r_edge = 2.15 * math.tan(math.radians(70))
    assert los_gain(ap(0, 0), ue(0, r_edge * 0.999), RAD) > 0
    assert los_gain(ap(0, 0), ue(0, r_edge * 1.001), RAD) == 0.0


def test_los_inverse_square_at_nadir():
    near = los_gain(np.array([0, 0, 2.0]), np.array([0, 0, 0.0]), RAD)
    far = los_gain(np.array([0, 0, 4.0]), np.array([0, 0, 0.0]), RAD)
    assert near / far == pytest.approx(4.0, rel=1e-14)


def test_coincident_positions_raise():
    with pytest.raises(ValueError):
        los_gain(ap(1, 1), ap(1, 1), RAD)


@given(st.floats(0.0, 4.0), st.floats(0.0, 8.0))
def test_cosines_agree_for_vertical_optics(x, y):
    d, cphi, cpsi = incidence_cosines(ap(1.0, 3.0), ue(x, y))
    assert abs(cphi - cpsi) < 1e-12
    assert cphi == pytest.approx(2.15 / d, abs=1e-12)


@given(st.floats(0.1, 10.0))
def test_nadir_closed_form(d):
    g = los_gain(np.array([0, 0, d]), np.zeros(3), RAD)
    assert g == pytest.approx(2 * 1e-4 / (2 * math.pi * d * d), rel=1e-12)


# ---------------------------------------------------------------------- NLoS
def test_zero_reflectivity_kills_nlos():
    dark = Room(4, 8, 3, rho_wall=0.0)
    assert nlos_first_order_gain(ap(1, 1), ue(2, 5), dark, RAD) == 0.0


@pytest.mark.parametrize("a, u", [((1, 1), (2, 4)), ((3, 7), (0.3, 7.5)),
                                  ((1, 3), (3.9, 0.2))])
def test_nlos_matches_fine_brute_force(a, u):
    ref = brute_nlos(ap(*a), ue(*u))
    assert nlos_first_order_gain(ap(*a), ue(*u), ROOM, RAD) == pytest.approx(ref, rel=0.015)


def test_nlos_halving_patch_edge_converges():
    rng = np.random.default_rng(11)
    fine = Room(4, 8, 3, patch_edge=0.125)
    for _ in range(5):
        a = ap(*rng.choice([1.0, 3.0], 1), *rng.choice([1.0, 3.0, 5.0, 7.0], 1))
        u = ue(rng.uniform(0, 4), rng.uniform(0, 8))
        coarse_v = nlos_first_order_gain(a, u, ROOM, RAD)
        fine_v = nlos_first_order_gain(a, u, fine, RAD)
        assert abs(coarse_v - fine_v) / fine_v < 0.02


def test_nlos_is_small_next_to_nadir_los():
    g = nlos_first_order_gain(ap(2, 4), ue(2, 4), ROOM, RAD)
    assert 0 < g < NADIR_LOS


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 4.0), st.floats(0.0, 8.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_nlos_monotone_in_reflectivity(x, y, r1, r2):
    lo, hi = sorted((r1, r2))
    g_lo = nlos_first_order_gain(ap(1, 3), ue(x, y), Room(4, 8, 3, rho_wall=lo), RAD)
    g_hi = nlos_first_order_gain(ap(1, 3), ue(x, y), Room(4, 8, 3, rho_wall=hi), RAD)
    assert 0 <= g_lo <= g_hi * (1 + 1e-12)


def test_wall_limit_is_continuous():
    a = ap(1, 3)
    at_wall = nlos_first_order_gain(a, ue(0.0, 4.0), ROOM, RAD)
    near = nlos_first_order_gain(a, ue(1e-6, 4.0), ROOM, RAD)
    assert at_wall == pytest.approx(near, rel=1e-4)


def test_floor_and_ceiling_add_reflections():
    all_surfaces = Room(4, 8, 3, reflect_floor=True, reflect_ceiling=True)
    g_walls = nlos_first_order_gain(ap(1, 3), ue(2, 4), ROOM, RAD)
    g_all = nlos_first_order_gain(ap(1, 3), ue(2, 4), all_surfaces, RAD)
    # an upward PD sees the ceiling, but a downward AP never lights it
    assert g_all >= g_walls


# -------------------------------------------------------------------- matrix
def test_channel_matrix_single_pair_composition():
    dark = Room(4, 8, 3, rho_wall=0.0)
    m = build_channel_matrix(ap(2, 4)[None], ue(2, 4)[None], dark, RAD)
    assert m.h_total[0, 0] == pytest.approx(6.886e-6, rel=1e-3)
    assert m.gain[0, 0] == pytest.approx((0.5 * NADIR_LOS) ** 2, rel=1e-12)
    assert m.gain[0, 0] == pytest.approx(1.185e-11, rel=1e-3)


def test_channel_matrix_invariants_and_purity():
    rng = np.random.default_rng(0)
    aps = np.array([ap(x, y) for x in (1, 3) for y in (1, 3, 5, 7)])
    users = np.column_stack([rng.uniform(0, 4, 6), rng.uniform(0, 8, 6), np.full(6, H_UE)])
    a = build_channel_matrix(aps, users, ROOM, RAD)
    b = build_channel_matrix(aps, users, ROOM, RAD)
    assert np.array_equal(a.gain, b.gain)
    assert np.all(a.h_los >= 0) and np.all(a.h_nlos >= 0)
    assert np.array_equal(a.h_total, a.h_los + a.h_nlos)
    assert np.allclose(a.gain, (RAD.responsivity * a.h_total) ** 2, rtol=1e-15)
    perm = rng.permutation(6)
    c = build_channel_matrix(aps, users[perm], ROOM, RAD)
    # BLAS may round the reordered product differently in the last bit
    np.testing.assert_allclose(c.gain, a.gain[:, perm], rtol=1e-12, atol=0)


@given(st.floats(0.0, 1.5), st.floats(0.0, 1.5))
def test_los_nonincreasing_when_moving_away(r, extra):
    near = los_gain(ap(2, 4), ue(2 + r, 4), RAD)
    far = los_gain(ap(2, 4), ue(2 + r + extra, 4), RAD)
    assert far <= near


def test_reflection_table_tracks_exact_sum():
    model = ChannelModel.from_config(CFG)
    exact = ChannelModel(model.ap_pos, ROOM, RAD)
    rng = np.random.default_rng(5)
    users = np.column_stack([rng.uniform(0, 4, 200), rng.uniform(0, 8, 200), np.full(200, H_UE)])
    t, e = model.build(users), exact.build(users)
    assert np.array_equal(t.h_los, e.h_los)
    assert np.max(np.abs(t.h_total - e.h_total) / e.h_total) < 0.02
