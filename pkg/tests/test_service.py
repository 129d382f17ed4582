import struct
import zlib

import pytest
from fastapi.testclient import TestClient

from modelsplit.service import create_app

SMALL = {"task": "sl_toy", "model": "toy_mlp", "hidden": [8, 8], "budget": 30, "eval_every": 5, "seeds": 2,
         "batch_size": 16, "data": {"n_train": 80, "n_test": 40}, "alphas": [0.5, 1.0],
         "procedures": [{"kind": "T1"}, {"kind": "full"}]}


@pytest.fixture
def client(tmp_path):
    return TestClient(create_app(str(tmp_path / "results")))


def test_health(client):
    assert client.get("/health").json()["status"] == "ok"


def test_count_params_builtin(client):
    d = client.get("/count-params/a3c_table6").json()
    assert d["total"] == 1_267_200
    assert client.get("/count-params/vgg").status_code == 404


def test_count_params_from_config(client):
    d = client.post("/count-params", json={"config": SMALL}).json()
    assert d["total"] == 10 * 8 + 8 + 8 * 8 + 8 + 8 * 4 + 4


def test_bad_config_is_422(client):
    r = client.post("/experiments", json={"config": {**SMALL, "alphas": [2.0]}})
    assert r.status_code == 422 and "alpha" in r.json()["detail"]


def test_experiment_lifecycle_and_report(client, tmp_path):
    r = client.post("/experiments", json={"config": SMALL, "wait": True})
    assert r.status_code == 202
    st = r.json()
    assert st["status"] == "done" and len(st["estimates"]) == 2 * 2
    again = client.get(f"/experiments/{st['experiment_id']}").json()
    assert again["status"] == "done"
    rep = client.post("/report", json={"results_dir": st["output_dir"], "out_dir": str(tmp_path / "rep")}).json()
    assert len(rep["rows"]) == 2 * 2 * 2
    assert rep["plot_data"].startswith("experiment\tpartition")
    assert set(rep["files"]) == {"table", "summary", "plot"}


def test_background_experiment_completes(client):
    r = client.post("/experiments", json={"config": {**SMALL, "seeds": 1}})
    assert r.status_code == 202
    # TestClient runs background tasks before returning
    assert client.get(f"/experiments/{r.json()['experiment_id']}").json()["status"] == "done"


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_failed_experiment_reports_kind(client):
    st = client.post("/experiments", json={"config": {**SMALL, "seeds": 1, "schedule": [[0, 1e6]]},
                                           "wait": True}).json()
    assert st["status"] == "failed" and st["error_kind"] == "numeric"


def test_unknown_experiment_and_missing_results(client, tmp_path):
    assert client.get("/experiments/nope").status_code == 404
    r = client.post("/report", json={"results_dir": str(tmp_path / "none")})
    assert r.status_code == 404 and r.json()["kind"] == "records"


def test_frame_codec(client):
    body = bytes.fromhex("53504C540101" + "00" * 10)
    golden = (body + struct.pack("<I", zlib.crc32(body))).hex()
    assert client.post("/frames/encode", json={"msg_type": "CONSENT_REQ", "step": 0}).json()["hex"] == golden
    enc = client.post("/frames/encode", json={"msg_type": "FORWARD_ACT", "step": 2, "dtype": 8, "shape": [2, 2],
                                              "values": [1, 2, 3, 4]}).json()["hex"]
    dec = client.post("/frames/decode", json={"hex": enc}).json()
    assert dec["shape"] == [2, 2] and dec["values"] == [1, 2, 3, 4] and dec["step"] == 2
    bad = bytearray(bytes.fromhex(enc))
    bad[0] = 0
    r = client.post("/frames/decode", json={"hex": bad.hex()})
    assert r.status_code == 422 and r.json()["kind"] == "BadMagic"


def test_unset_output_dir_uses_service_default(client, tmp_path):
    st = client.post("/experiments", json={"config": {**SMALL, "seeds": 1}, "wait": True}).json()
    assert st["output_dir"] == str(tmp_path / "results")
