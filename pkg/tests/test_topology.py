import math

import numpy as np
import pytest

from pinchfl.topology import (ClientProfile, DegenerateGeometryError, NetworkGeometry,
                              PlacementRangeError, Point3, conventional_gain, noise_power_watts,
                              pinching_coefficient, pinching_gain, pinching_gains_batch,
                              place_clients, read_roster, write_roster)

import reference as ref


def client_at(x, y, **kw):
    return ClientProfile(id=kw.pop("id", 0), position=Point3(x, y, 0.0), dataset_size=500, **kw)


@pytest.fixture
def geo():
    return NetworkGeometry()


def test_eta_and_gain_at_ten_metres(geo):
    assert geo.eta == pytest.approx(6.816e-3, rel=1e-3)
    g = conventional_gain(client_at(10.0, 0.0), geo)
    assert g == pytest.approx(1.849e-7, rel=1e-3)
    assert g == pytest.approx(ref.conv_gain(10.0, 0.0), rel=1e-12)


def test_unit_distance_gain_is_eta_squared(geo):
    assert conventional_gain(client_at(1.0, 0.0), geo) == geo.eta ** 2


def test_fading_scales_gain(geo):
    c = client_at(7.0, 2.0)
    assert conventional_gain(c, geo, 2.0) == 2.0 * conventional_gain(c, geo)


def test_pathloss_doubling_law(geo):
    r = 4.3
    ratio = conventional_gain(client_at(2 * r, 0.0), geo) / conventional_gain(client_at(r, 0.0), geo)
    assert ratio == pytest.approx(2 ** -2.4, rel=1e-12)


def test_zero_distance_is_rejected(geo):
    with pytest.raises(DegenerateGeometryError):
        conventional_gain(client_at(0.0, 0.0), geo)


def test_pinching_directly_below_antenna(geo):
    c = client_at(12.0, 0.0)
    assert pinching_gain(c, 12.0, geo) == pytest.approx(geo.eta ** 2 / 9, rel=1e-12)
    assert pinching_gain(c, 12.0, geo) == pytest.approx(5.162e-6, rel=1e-3)


def test_pinching_symmetry_and_phase_wrap(geo):
    a, b = client_at(10.0, 2.0), client_at(14.0, -2.0)
    ha, hb = pinching_coefficient(a, 12.0, geo), pinching_coefficient(b, 12.0, geo)
    assert abs(ha) == pytest.approx(abs(hb), rel=1e-12)
    assert np.angle(ha) == pytest.approx(np.angle(hb), abs=1e-9)
    # Client exactly one wavelength from a low-hung antenna.
    lam = geo.wavelength
    geo_low = NetworkGeometry(waveguide_height=lam / 2)
    c = client_at(5.0, math.sqrt(lam ** 2 - (lam / 2) ** 2))
    h = pinching_coefficient(c, 5.0, geo_low)
    assert np.angle(h) == pytest.approx(0.0, abs=1e-9)


def test_pinching_range_error(geo):
    with pytest.raises(PlacementRangeError):
        pinching_gain(client_at(1.0, 1.0), 31.0, geo)


def test_pinching_gain_decreasing_in_distance(geo):
    rng = np.random.default_rng(3)
    dists = np.sort(rng.uniform(0.0, 20.0, 50))
    gains = [pinching_gain(client_at(15.0 + d, 0.0), 15.0, NetworkGeometry(area_length=40)) for d in dists]
    assert all(g1 > g2 for g1, g2 in zip(gains, gains[1:]))


def test_pinching_best_placement_is_clamped_abscissa(geo):
    for x in (-3.0, 0.0, 7.5, 29.0, 34.0):
        c = client_at(x, 1.5) if 0 <= x <= 30 else None
        xs = np.linspace(0.0, 30.0, 30001)
        g = pinching_gains_batch(np.array([x]), np.array([1.5]), xs, geo)[:, 0]
        assert xs[np.argmax(g)] == pytest.approx(min(max(x, 0.0), 30.0), abs=1e-3)
        if c is not None:
            assert pinching_gain(c, 7.0, geo) == pytest.approx(g[7000], rel=1e-12)


def test_noise_power():
    assert noise_power_watts(-174.0, 1e6) == pytest.approx(3.981e-15, rel=1e-3)
    assert NetworkGeometry().noise_power == pytest.approx(ref.noise_watts(-174.0, 1e6), rel=1e-12)


def test_place_clients_inside_rectangle(geo):
    cl = place_clients(30, geo, seed=11)
    assert len(cl) == 30
    for c in cl:
        assert 0.0 <= c.position.x <= 30.0 and abs(c.position.y) <= 5.0
        assert 100 <= c.dataset_size <= 1000
    assert len(place_clients(1, geo, seed=5)) == 1


def test_place_clients_deterministic(geo):
    assert place_clients(30, geo, 4) == place_clients(30, geo, 4)
    assert place_clients(30, geo, 4) != place_clients(30, geo, 5)


def test_roster_round_trip(tmp_path, geo):
    cl = place_clients(8, geo, 2)
    path = tmp_path / "roster.csv"
    write_roster(path, cl)
    assert read_roster(path) == cl


def test_profile_validation():
    with pytest.raises(ValueError):
        client_at(1.0, 1.0, p_max=0.0)
    with pytest.raises(ValueError):
        ClientProfile(id=0, position=Point3(1.0, 0.0), dataset_size=0)
