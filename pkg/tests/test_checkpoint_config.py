import numpy as np
import pytest

from cpl import autodiff as ad
from cpl import checkpoint
from cpl.config import Config, load_config, parse_config
from cpl.errors import ConfigError, DataError
from cpl.reasoner import Reasoner, ReasonerConfig

from conftest import small_config


def _trained_store(seed=0):
    r = Reasoner(6, 3, ReasonerConfig(3, 3, 3, 4), np.random.default_rng(seed))
    for g in r.store.grads.values():
        g[...] = np.random.default_rng(seed + 1).normal(size=g.shape)
    ad.adam_update(r.store, 0.01)
    return r.store


def test_round_trip_is_byte_identical(tmp_path):
    store = _trained_store()
    path = tmp_path / "r.ckpt"
    checkpoint.save(path, store, "reasoner", "abc")
    fresh = Reasoner(6, 3, ReasonerConfig(3, 3, 3, 4), np.random.default_rng(99)).store
    checkpoint.load_into(path, fresh, "reasoner", "abc")
    assert fresh.step == store.step == 1
    for name in store.names():
        assert store.tensors[name].tobytes() == fresh.tensors[name].tobytes()
        assert store.m[name].tobytes() == fresh.m[name].tobytes()
        assert store.v[name].tobytes() == fresh.v[name].tobytes()
    checkpoint.save(tmp_path / "again.ckpt", fresh, "reasoner", "abc")
    assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()


def test_header_layout():
    raw = checkpoint.encode(_trained_store(), "reasoner", "h")
    assert raw[:8] == b"CPLCKPT\x00"
    assert int.from_bytes(raw[8:12], "little") == checkpoint.FORMAT_VERSION
    agent, chash, step, tensors = checkpoint.decode(raw)
    assert (agent, chash, step) == ("reasoner", "h", 1)
    assert list(tensors)[0] == "entity_emb"


@pytest.mark.parametrize("mangle", [
    lambda b: b[:-3],
    lambda b: b + b"\x00",
    lambda b: b"XXXXXXXX" + b[8:],
    lambda b: b[:8] + (7).to_bytes(4, "little") + b[12:],
])
def test_corrupt_files_rejected(mangle):
    raw = checkpoint.encode(_trained_store(), "reasoner", "h")
    with pytest.raises(DataError):
        checkpoint.decode(mangle(raw))


def test_mismatches_rejected(tmp_path):
    raw = checkpoint.encode(_trained_store(), "reasoner", "h")
    target = Reasoner(6, 3, ReasonerConfig(3, 3, 3, 4)).store
    with pytest.raises(DataError, match="hash"):
        checkpoint.load_bytes_into(raw, target, "reasoner", "other")
    with pytest.raises(DataError):
        checkpoint.load_bytes_into(raw, target, "extractor", "h")
    wider = Reasoner(6, 3, ReasonerConfig(4, 3, 3, 4)).store
    with pytest.raises(DataError, match="shape"):
        checkpoint.load_bytes_into(raw, wider, "reasoner", "h")
    with pytest.raises(DataError):
        checkpoint.load_into(tmp_path / "missing.ckpt", target, "reasoner", "h")


def test_model_hash_tracks_architecture_only():
    a = small_config()
    assert a.model_hash("reasoner") == a.replace(lr=0.5, e_m=9).model_hash("reasoner")
    assert a.model_hash("reasoner") != a.replace(hidden_dim=9).model_hash("reasoner")
    assert a.model_hash("extractor") != a.replace(n_filters=9).model_hash("extractor")
    assert a.full_hash() != a.replace(lr=0.5).full_hash()


def test_config_text_round_trip(tmp_path):
    cfg = small_config(hits_inclusive=True, eval_relations="r_q")
    again = parse_config(cfg.dump())
    assert again == cfg
    p = tmp_path / "c.cfg"
    p.write_text("# comment\nlr = 0.01  # trailing\n\nuse_replay = no\n", encoding="utf-8")
    loaded = load_config(p, seed=7)
    assert (loaded.lr, loaded.use_replay, loaded.seed) == (0.01, False, 7)
    assert load_config(None) == Config()


@pytest.mark.parametrize("text", ["nonsense = 1", "lr = fast", "use_replay = maybe", "just words",
                                  "e_a = 10\ne_m = 5", "gamma_reasoner = 2", "seeds = 1,x",
                                  "two_step_thresholds = 0.5,1.5"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_shipped_synthetic_config_parses():
    import pathlib

    cfg = load_config(pathlib.Path(__file__).resolve().parents[1] / "configs" / "synthetic.cfg")
    assert cfg.seed_list() == [55, 83, 5583]
    assert cfg.e_a <= cfg.e_m <= 500
