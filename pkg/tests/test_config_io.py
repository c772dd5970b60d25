import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdqkd.channel import ChannelParams
from hdqkd.config import CONFIG_DIR_ENV, PRESETS, RunConfig, load_config, preset
from hdqkd.eventsim import (ClockModel, TimebinGeometry, attenuation_samples,
                            generate_sequence, simulate_session)
from hdqkd.io import (MAGIC, atomic_write, read_samples_csv, read_tags, read_tags_binary,
                      read_tags_csv, write_samples_csv, write_tags_binary, write_tags_csv)
from hdqkd.optimizer import default_params


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_ini_roundtrip(name):
    cfg = preset(name)
    back = RunConfig.from_ini(cfg.to_ini())
    assert back == cfg
    assert back.config_hash() == cfg.config_hash()


def test_preset_values():
    c = preset("fig4")
    assert (c.d, c.mu1, c.mu2, c.p_mu1, c.c_overlap, c.loss_db) == (4, 0.37, 0.13, 0.76, 1.75, 25.0)
    assert c.R == 250e6
    t = preset("table2-2d")
    assert (t.d, t.mu1, t.p_mu1, t.c_overlap, t.loss_db) == (2, 0.35, 0.73, 0.93, 23.5)
    assert preset("fig5").protocol().c_overlap == 2.0
    with pytest.raises(ValueError):
        preset("nope")


@settings(max_examples=50)
@given(st.floats(0.2, 0.99), st.floats(0.01, 0.99), st.floats(0, 80), st.integers(0, 2**63 - 1))
def test_arbitrary_config_roundtrip(mu1, frac, loss, seed):
    cfg = preset("fig4").updated(mu1=mu1, mu2=mu1 * frac, loss_db=loss, seed=seed)
    assert RunConfig.from_ini(cfg.to_ini()) == cfg


def test_updated_skips_none_and_validates():
    cfg = preset("fig4")
    assert cfg.updated(mu1=None) == cfg
    with pytest.raises(ValueError):
        cfg.updated(mu2=0.5)
    with pytest.raises(ValueError):
        cfg.updated(P_DC=2.0)


def test_hash_sensitive_to_every_change():
    cfg = preset("fig4")
    assert cfg.updated(seed=1).config_hash() != cfg.config_hash()
    assert cfg.updated(loss_db=25.000001).config_hash() != cfg.config_hash()


def test_load_config_env_dir(tmp_path, monkeypatch):
    (tmp_path / "run.ini").write_text(preset("table2-2d").to_ini())
    monkeypatch.chdir(tmp_path.parent)
    monkeypatch.setenv(CONFIG_DIR_ENV, str(tmp_path))
    assert load_config("run.ini") == preset("table2-2d")
    monkeypatch.delenv(CONFIG_DIR_ENV)
    with pytest.raises(FileNotFoundError):
        load_config("run.ini")


def test_unknown_ini_key_rejected():
    text = preset("fig4").to_ini().replace("[run]", "[run]\nbogus = 1")
    with pytest.raises(ValueError):
        RunConfig.from_ini(text)


# ---------------------------------------------------------------- tag files


@pytest.fixture(scope="module")
def tags():
    p = default_params(4)
    geo = TimebinGeometry.for_dimension(4, p.R)
    seq = generate_sequence(1000, 4, seed=1)
    return simulate_session(seq, geo, ChannelParams(5.0, P_DC=1e-4), p, n_symbols=200_000,
                            clock=ClockModel(offset=-3.3e-7, white_pm_sigma=1e-12), seed=2)


def _same(a, b, blind=False):
    assert a.n_sent == b.n_sent and np.array_equal(a.time, b.time)
    assert np.array_equal(a.channel, b.channel)
    if blind:
        assert b.blind
        return
    for name in ("symbol", "photons", "basis", "state", "is_dark"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


@pytest.mark.parametrize("blind", [False, True])
def test_binary_roundtrip_exact(tmp_path, tags, blind):
    path = tmp_path / "t.bin"
    write_tags_binary(path, tags, blind=blind)
    raw = path.read_bytes()
    assert raw[:8] == MAGIC
    assert len(raw) == 32 + len(tags) * (9 if blind else 21)
    _same(tags, read_tags_binary(path), blind)
    _same(tags, read_tags(path), blind)


@pytest.mark.parametrize("blind", [False, True])
def test_csv_roundtrip_exact(tmp_path, tags, blind):
    path = tmp_path / "t.csv"
    write_tags_csv(path, tags, blind=blind)
    back = read_tags_csv(path, n_sent=tags.n_sent)
    _same(tags, back, blind)
    sniffed = read_tags(path)
    assert np.array_equal(sniffed.time, tags.time) and sniffed.blind == blind


def test_binary_rejects_garbage(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"NOTATAGFILE" + bytes(40))
    with pytest.raises(ValueError):
        read_tags_binary(path)


def test_samples_roundtrip(tmp_path):
    s = attenuation_samples(default_params(4), ChannelParams(0.0), [20.0, 20.5, 31.25], 0.1, seed=3)
    path = tmp_path / "s.csv"
    write_samples_csv(path, s)
    assert read_samples_csv(path) == s


def test_atomic_write_replaces_and_respects_umask(tmp_path):
    path = tmp_path / "out.txt"
    atomic_write(path, "one")
    atomic_write(path, b"two")
    assert path.read_text() == "two"
    old = os.umask(0o022)
    os.umask(old)
    assert (path.stat().st_mode & 0o777) == 0o666 & ~old
    assert [p.name for p in tmp_path.iterdir()] == ["out.txt"]
