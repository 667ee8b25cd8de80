import pytest

from nveaudit.codec import Kind, WireMessage
from nveaudit.netsim import Envelope, Fabric, FabricConfig, FabricError, LateDelivery


def commit(src, cycle):
    return WireMessage(Kind.DIFF_COMMIT, src, cycle, bytes(16))


def env(src, dst, cycle, sent, deadline=None):
    return Envelope(commit(src, cycle), src, dst, sent, deadline)


def test_in_cycle_delivery_without_loss():
    f = Fabric(FabricConfig(), [1, 2])
    assert f.send(env(1, 2, 0, 0)) == 0
    got = f.collect(2)
    assert [e.message.cycle for e in got] == [0]
    assert f.collect(2) == [] and f.pending() == 0


def test_drop_rate_within_two_percent():
    f = Fabric(FabricConfig(drop_probability=0.3, seed=11), [1, 2])
    dropped = sum(f.send(env(1, 2, i, 0)) is None for i in range(10_000))
    assert abs(dropped / 10_000 - 0.3) <= 0.02
    assert sum(r.dropped for r in f.traffic) == dropped


def test_delay_bounds_and_ordering():
    f = Fabric(FabricConfig(max_delay=3, seed=2), [1, 2])
    arrivals = [f.send(env(1, 2, i, 0)) for i in range(500)]
    assert set(arrivals) == {0, 1, 2, 3}
    seen = []
    for _ in range(4):
        seen += [e.message.cycle for e in f.collect(2)]
        seen += [e.message.cycle for e in f.advance_cycle().get(2, [])]
    seen += [e.message.cycle for e in f.collect(2)]
    assert sorted(seen) == list(range(500))


def test_reliable_never_dropped():
    f = Fabric(FabricConfig(drop_probability=1.0, max_delay=5, seed=0), [1, 2])
    assert all(f.send(env(1, 2, i, 0, deadline=1)) == 0 for i in range(100))
    assert all(f.send(env(1, 2, i, 0)) is None for i in range(100))


def test_late_delivery_injection():
    late = (LateDelivery(1, Kind.DIFF_COMMIT, 42, lateness=2),)
    f = Fabric(FabricConfig(late=late), [1, 2])
    assert f.send(env(1, 2, 42, 0, deadline=1)) == 2
    assert f.send(env(1, 2, 43, 0, deadline=1)) == 0


def test_determinism_per_seed():
    def trace(seed):
        f = Fabric(FabricConfig(drop_probability=0.5, max_delay=2, seed=seed), [1, 2])
        return [f.send(env(1, 2, i, 0)) for i in range(200)]

    assert trace(5) == trace(5)
    assert trace(5) != trace(6)


def test_contract_violations():
    with pytest.raises(FabricError):
        FabricConfig(drop_probability=1.5)
    with pytest.raises(FabricError):
        FabricConfig(max_delay=-1)
    with pytest.raises(FabricError):
        env(1, 2, 0, 5, deadline=4)
    f = Fabric(FabricConfig(), [1, 2])
    with pytest.raises(FabricError):
        f.send(env(1, 3, 0, 0))
    f.advance_cycle()
    with pytest.raises(FabricError):
        f.send(env(1, 2, 0, 0))


def test_byte_accounting():
    f = Fabric(FabricConfig(), [1, 2])
    for i in range(3):
        f.send(env(1, 2, i, 0))
    assert f.byte_accounting() == {1: {"DIFF_COMMIT": 3 * 41}}
    assert all(r.mac_bytes == 16 for r in f.traffic)
