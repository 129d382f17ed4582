import threading

import numpy as np
import pytest

from modelsplit.nn import init_params, mlp
from modelsplit.runs import Dataset, TrainConfig
from modelsplit.splitproto import (PeerAborted, ProtocolDesync, ProtocolError, Role, RoleMismatch, MsgType,
                                   WireFrame, boundary_after, connect, encode_frame, listen, pipe_pair,
                                   run_split_training, run_training, socket_pair, split_index)
from modelsplit.tensor import STREAM_INIT, RngStream

MODEL = mlp([6, 8, 8], 3)
CFG = TrainConfig(budget=30, batch_size=16, eval_every=10, seed=2, data_seed=2)


def params():
    return init_params(MODEL, RngStream(2, STREAM_INIT))


def run_pair(toy_data, boundary, make=pipe_pair, cfg=CFG, alice_consent=None, bob_consent=None, roles=None):
    a_t, b_t = make()
    p = params()
    names = roles or ("alice", "bob")
    ra, rb = Role(names[0], boundary), Role(names[1], boundary)
    commits = {"alice": {}, "bob": {}}
    out, errors = {}, {}

    def side(key, role, transport, data, test, consent):
        try:
            out[key] = run_split_training(role, transport, MODEL, p.subset(role.layer_names(MODEL)), cfg, data,
                                          test, consent=consent,
                                          on_commit=lambda s, q: commits[key].__setitem__(s, q.copy()))
        except Exception as e:  # surfaced to the test below
            errors[key] = e
        finally:
            transport.close()

    d = toy_data
    both = Dataset(d.train.x, d.train.y), Dataset(d.test.x, d.test.y)
    ta = threading.Thread(target=side, args=("alice", ra, a_t, *both, alice_consent))
    tb = threading.Thread(target=side, args=("bob", rb, b_t, *both, bob_consent))
    ta.start(), tb.start()
    ta.join(60), tb.join(60)
    return out, errors, commits


@pytest.mark.parametrize("boundary", [1, 2])
def test_split_matches_monolithic_at_every_step(toy_data, boundary):
    mono = {}
    ref = run_training(MODEL, params(), toy_data, CFG, on_commit=lambda s, q: mono.__setitem__(s, q.copy()))
    out, errors, commits = run_pair(toy_data, boundary)
    assert not errors
    assert out["alice"].committed == out["bob"].committed == CFG.budget
    for step, full in mono.items():
        a, b = commits["alice"][step], commits["bob"][step]
        for name in full.segments:
            got = a.segment(name) if name in a.segments else b.segment(name)
            assert np.max(np.abs(got - full.segment(name))) <= 1e-9
    np.testing.assert_allclose(out["bob"].losses, ref.losses, rtol=0, atol=1e-9)
    assert out["bob"].steps == ref.steps


def test_transcripts_agree(toy_data):
    out, errors, _ = run_pair(toy_data, 1)
    assert not errors
    a, b = out["alice"].extras, out["bob"].extras
    assert a["transcript"] == b["transcript"]
    assert a["commit_hashes"] == b["commit_hashes"] and len(a["commit_hashes"]) == CFG.budget + 1


def test_bob_denies_at_step_five(toy_data):
    out, errors, commits = run_pair(toy_data, 1, bob_consent=lambda s: s < 5)
    assert not errors
    for side in ("alice", "bob"):
        assert out[side].committed == 5
        assert sorted(commits[side]) == [0, 1, 2, 3, 4]
        assert "denied by bob" in out[side].aborted


def test_alice_denies_at_start(toy_data):
    out, errors, _ = run_pair(toy_data, 2, alice_consent=lambda s: False)
    assert not errors
    assert out["alice"].committed == out["bob"].committed == 0


def test_both_alice_is_a_role_mismatch(toy_data):
    out, errors, _ = run_pair(toy_data, 1, roles=("alice", "alice"))
    assert any(isinstance(e, RoleMismatch) for e in errors.values())


def test_step_desync_detected():
    a_t, b_t = pipe_pair(timeout=5)
    a_t.send(encode_frame(WireFrame(MsgType.CONSENT_REQ, 4)))
    p = params()
    role = Role("bob", 1)
    with pytest.raises(ProtocolDesync):
        run_split_training(role, b_t, MODEL, p.subset(role.layer_names(MODEL)), CFG,
                           Dataset(None, np.zeros(10, int)), Dataset(None, np.zeros(5, int)))


def test_peer_abort_propagates():
    a_t, b_t = pipe_pair(timeout=5)
    a_t.send(encode_frame(WireFrame(MsgType.ABORT, 0)))
    role = Role("bob", 1)
    with pytest.raises(PeerAborted):
        run_split_training(role, b_t, MODEL, params().subset(role.layer_names(MODEL)), CFG,
                           Dataset(None, np.zeros(10, int)), Dataset(None, np.zeros(5, int)))


def test_wrong_layer_set_rejected():
    a_t, _ = pipe_pair(timeout=1)
    with pytest.raises(ValueError):
        run_split_training(Role("alice", 1), a_t, MODEL, params(), CFG, Dataset(np.zeros((4, 6)), None),
                           Dataset(np.zeros((2, 6)), None))


def test_boundary_helpers():
    assert boundary_after(MODEL, "fc1") == 1
    assert boundary_after(MODEL, "fc2") == 2
    assert Role("alice", 1).layer_names(MODEL) == ["fc1"]
    assert Role("bob", 1).layer_names(MODEL) == ["fc2", "fc3"]
    for bad in (0, 3):
        with pytest.raises(ValueError):
            split_index(MODEL, bad)


def test_socketpair_session_equivalent(toy_data):
    out_pipe, _, _ = run_pair(toy_data, 1)
    out_sock, errors, _ = run_pair(toy_data, 1, make=socket_pair)
    assert not errors
    assert out_sock["bob"].points == out_pipe["bob"].points
    assert out_sock["alice"].extras["transcript"] == out_pipe["alice"].extras["transcript"]


def test_tcp_listen_connect(toy_data):
    port = {}
    ready = threading.Event()
    box = {}

    def serve():
        box["srv"] = listen("127.0.0.1:0", timeout=10, on_bound=lambda p: (port.setdefault("p", p), ready.set()))

    t = threading.Thread(target=serve)
    t.start()
    assert ready.wait(10)
    cli = connect(f"127.0.0.1:{port['p']}", timeout=10)
    t.join(10)
    srv = box["srv"]
    out, errors, _ = run_pair(toy_data, 2, make=lambda: (srv, cli))
    assert not errors and out["alice"].extras["transcript"] == out["bob"].extras["transcript"]


def test_listen_on_busy_port_fails():
    from modelsplit.splitproto import TransportClosed
    with pytest.raises(TransportClosed):
        listen("127.0.0.1:0", timeout=0.2)
