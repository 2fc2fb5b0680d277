from dataclasses import replace

import pytest

from abpsim.engine import Engine, us
from abpsim.lisp import LispClient, LispParams, MapCacheEntry, lisp_path_latency
from abpsim.mipv6 import BindingState, Mipv6Client, Mipv6Params, mipv6_path_latency
from abpsim.radio import LinkParams, RadioLink
from abpsim.runner import simulate
from abpsim.world import AccessPoint, CoverageMap, WaypointPath, World

MIPV6_STEPS = ["router-adv", "dad", "binding-ack", "return-routability", "binding-ack",
               "handover-complete"]
LISP_STEPS = ["map-reply", "map-cache-update", "non-lisp-config", "handover-complete"]
CONTROL = set(MIPV6_STEPS) | set(LISP_STEPS) | {"handover-abort"}


def _control_kinds(log):
    return [e.kind for e in log if e.kind in CONTROL]


# -- MIPv6 -----------------------------------------------------------------------
def test_expected_control_time():
    p = Mipv6Params()
    assert p.expected_control_time() == pytest.approx(1.5 + 1.0 + 0.5 + 1.5 + 0.5)
    assert replace(p, route_optimization=False).expected_control_time() == pytest.approx(3.0)


def test_binding_state_invariant():
    with pytest.raises(AssertionError):
        BindingState(home_binding_valid=False, correspondent_binding_valid=True)


def test_path_latency_follows_bindings():
    p = Mipv6Params()
    assert mipv6_path_latency(BindingState(), p) is None
    assert mipv6_path_latency(BindingState("w/1", True), p) == us(0.030)
    assert mipv6_path_latency(BindingState("w/1", True, True), p) == 0


def test_mipv6_step_order(small_config):
    r = simulate(small_config, "mipv6", 1)
    assert r.ok, r.problems
    kinds = _control_kinds(r.log)
    assert kinds == MIPV6_STEPS * 2
    ha = [e for e in r.log if e.kind == "binding-ack"]
    assert [e.entity for e in ha] == ["ha", "cn"] * 2


def test_mipv6_without_route_optimization(small_config):
    cfg = replace(small_config, mipv6=replace(small_config.mipv6, route_optimization=False))
    r = simulate(cfg, "mipv6", 1)
    assert r.ok, r.problems
    assert _control_kinds(r.log) == ["router-adv", "dad", "binding-ack", "handover-complete"] * 2
    assert not r.log.kinds("return-routability")


def test_mipv6_downtime_covers_dad_and_binding(small_config):
    p = small_config.mipv6
    for seed in (1, 2):
        r = simulate(small_config, "mipv6", seed)
        for rec in r.records:
            assert rec.duration >= p.dad_delay + p.binding_update_rtt


# -- LISP --------------------------------------------------------------------------
def test_lisp_control_time_and_latency():
    p = LispParams()
    assert p.control_time() == pytest.approx(2.0)
    assert replace(p, correspondent_in_lisp_site=True).control_time() == pytest.approx(1.0)
    assert lisp_path_latency(MapCacheEntry("mn"), p) is None
    assert lisp_path_latency(MapCacheEntry("mn", "w/1", True), p) == us(0.005)


def test_lisp_step_order(small_config):
    r = simulate(small_config, "lisp", 1)
    assert r.ok, r.problems
    assert _control_kinds(r.log) == LISP_STEPS * 2


def test_lisp_site_saves_exactly_the_config_delay(small_config):
    site = replace(small_config, lisp=replace(small_config.lisp, correspondent_in_lisp_site=True))
    a = simulate(small_config, "lisp", 1).records
    b = simulate(site, "lisp", 1).records
    assert len(a) == len(b) == 1
    assert a[0].duration - b[0].duration == pytest.approx(small_config.lisp.non_lisp_config_delay,
                                                          abs=1e-6)


def test_lisp_beats_mipv6_on_every_handover(small_config):
    for seed in (1, 2):
        lisp = simulate(small_config, "lisp", seed).records
        mip = simulate(small_config, "mipv6", seed).records
        assert len(lisp) == len(mip)
        for a, b in zip(lisp, mip):
            assert a.duration < b.duration


# -- shared single-interface behaviour -------------------------------------------------
def _flapping(client_cls, params):
    # the first AP is lost during the control procedure and a second one takes over
    path = WaypointPath([(0, 0), (10, 0)], 0.1)
    aps = [AccessPoint("a", (0, 0), 50, "w1"), AccessPoint("b", (5, 0), 50, "w2")]
    cov = CoverageMap({"a": [(0, us(2.5))], "b": [(us(2.5), us(100))]}, us(100))
    eng = Engine(1)
    radio = RadioLink(eng, World(aps, [], path), LinkParams(), nic_count=1, coverage=cov)
    client = client_cls(eng, radio, params)
    radio.start()
    eng.run_until(us(20))
    return eng, client


def test_lost_link_aborts_and_restarts_procedure():
    eng, client = _flapping(LispClient, LispParams())
    kinds = _control_kinds(eng.log)
    assert kinds[:3] == ["map-reply", "map-cache-update", "handover-abort"]
    assert kinds[3:] == LISP_STEPS
    assert client.ready and client.cache.valid


def test_mipv6_abort_clears_bindings():
    eng, client = _flapping(Mipv6Client, replace(Mipv6Params(), router_adv_interval=0.0))
    assert "handover-abort" in _control_kinds(eng.log)
    assert _control_kinds(eng.log)[-6:] == MIPV6_STEPS
    assert client.binding.correspondent_binding_valid


def test_baselines_drive_one_nic():
    path = WaypointPath([(0, 0), (1, 0)], 1)
    eng = Engine()
    radio = RadioLink(eng, World([AccessPoint("a", (0, 0), 5, "w")], [], path), LinkParams(),
                      nic_count=2)
    with pytest.raises(ValueError):
        LispClient(eng, radio, LispParams())


def test_zero_control_delays_leave_only_the_link_layer(small_config):
    mip = replace(small_config.mipv6, router_adv_interval=0.0, dad_delay=0.0,
                  binding_update_rtt=0.0, return_routability_rtt=0.0)
    lisp = replace(small_config.lisp, map_request_rtt=0.0, map_cache_update_delay=0.0,
                   non_lisp_config_delay=0.0)
    cfg = replace(small_config, mipv6=mip, lisp=lisp)
    link = cfg.link
    floor = link.association_delay + link.address_config_delay
    a = simulate(cfg, "mipv6", 1).records
    b = simulate(cfg, "lisp", 1).records
    assert len(a) == len(b) == 1
    # detection of the loss plus re-association, and one retry slot at most
    assert floor <= a[0].duration <= floor + link.beacon_loss_timeout + 0.1
    assert abs(a[0].duration - b[0].duration) <= cfg.mipv6.retry_interval
