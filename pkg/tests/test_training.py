import numpy as np
import pytest

from stran.autodiff import Tensor
from stran.backbone import stack_window
from stran.image_ops import DegradeConfig, degrade
from stran.io import checkpoint
from stran.toydata import toy_clip
from stran.training import (
    PRESETS,
    ConfigError,
    SampleTriple,
    TrainConfig,
    TrainSchedule,
    collate,
    format_config,
    parse_config,
)
from stran.training.data import DatasetError
from stran.training.loop import (
    LOG_HEADER,
    Trainer,
    TrainingError,
    checkpoint_name,
    config_from_array,
    config_to_array,
    load_generator,
    train_loop,
)

# small enough for a few seconds per epoch
TINY = dict(base_channels=8, num_blocks=2, injection=(0, 1), taps=(1,), lte_widths=(4, 4, 4),
            disc_widths=(4, 8), lr_patch=16, batch_size=2)


def toy_triples(n_clips=1, frames=3, size=64, seed=0, radius=2):
    out = []
    for c in range(n_clips):
        hr = toy_clip(seed + c, n_frames=frames, height=size, width=size)
        lr = [degrade(Tensor(f[None]), DegradeConfig()).data for f in hr]
        out += [SampleTriple(stack_window(lr, t, radius)[0], hr[t], hr[0]) for t in range(frames)]
    return out


# ---------------------------------------------------------------------------
# schedule and config
# ---------------------------------------------------------------------------
def test_schedule_trace():
    s = TrainSchedule(epochs=4, lr0=1e-3, halve_at=3, warmup=2)
    assert s.unfold() == [1e-3, 1e-3, 1e-3, 5e-4]
    assert [s.adversarial(e) for e in range(1, 5)] == [False, False, True, True]


def test_full_scale_preset_schedule():
    cfg = PRESETS["paper"]
    lrs = cfg.schedule.unfold()
    assert len(lrs) == 500
    assert set(lrs[:300]) == {1e-3} and set(lrs[300:]) == {5e-4}
    assert (cfg.warmup, cfg.lr_patch, cfg.temporal_radius) == (20, 96, 2)
    assert (cfg.w_rec, cfg.w_adv, cfg.w_per, cfg.w_tex) == (1.0, 5e-4, 1e-2, 1e-2)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        TrainSchedule(epochs=4, halve_at=5, warmup=1)
    with pytest.raises(ConfigError):
        TrainSchedule(epochs=4, halve_at=2, warmup=2)
    with pytest.raises(ConfigError):
        TrainConfig(lr_patch=18)


def test_config_text_round_trip():
    cfg = PRESETS["desk"].replace(seed=7, injection=(1, 5), lr0=2e-4)
    assert parse_config(format_config(cfg)) == cfg
    assert parse_config("") == PRESETS["desk"]
    assert parse_config("preset = paper\nepochs = 400  # shorter\n").epochs == 400


def test_config_errors():
    with pytest.raises(ConfigError, match="bogus_key"):
        parse_config("bogus_key = 1\nepochs = 5\nhalve_at = 4\nwarmup = 1")
    with pytest.raises(ConfigError, match="epochs"):
        parse_config("epochs = ten")
    with pytest.raises(ConfigError, match="preset"):
        parse_config("preset = huge")
    with pytest.raises(ConfigError):
        parse_config("just words")


def test_config_array_round_trip():
    cfg = PRESETS["paper"].replace(seed=3)
    arr = config_to_array(cfg)
    assert arr.dtype == np.float32
    assert config_from_array(arr) == cfg


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------
def test_triple_crop_aligned():
    t = toy_triples(frames=1, size=96)[0]
    assert t.scale == 4
    c = t.crop(2, 3, 16)
    assert c.window.shape == (15, 16, 16) and c.target.shape == (3, 64, 64)
    np.testing.assert_array_equal(c.target, t.target[:, 8:72, 12:76])
    np.testing.assert_array_equal(c.reference, t.reference[:, 8:72, 12:76])
    with pytest.raises(DatasetError):
        SampleTriple(t.window, t.target[:, :60], t.reference)


def test_collate_shapes():
    w, y, r = collate(toy_triples(frames=2))
    assert w.shape == (2, 15, 16, 16) and y.shape == (2, 3, 64, 64) and r.shape == (2, 3, 64, 64)


# ---------------------------------------------------------------------------
# trainer
# ---------------------------------------------------------------------------
def tiny_cfg(**kw):
    base = dict(TINY, epochs=3, halve_at=2, warmup=1, ckpt_every=1)
    base.update(kw)
    return TrainConfig(**base)


def test_warmup_leaves_discriminator_untouched():
    tr = Trainer(tiny_cfg())
    data = toy_triples(frames=2)
    before = {k: v.copy() for k, v in tr.d.state().items()}
    g_before = {k: v.copy() for k, v in tr.g.state().items()}
    rep = tr.run_epoch(data, 1)
    assert all(np.array_equal(before[k], v) for k, v in tr.d.state().items())
    assert any(not np.array_equal(g_before[k], v) for k, v in tr.g.state().items())
    assert tr.opt_d.t == 0
    assert all(np.isnan(r.l_adv) and np.isnan(r.l_d) for r in rep)
    rep = tr.run_epoch(data, 2)
    assert tr.opt_d.t == 1
    assert not any(np.isnan([rep[0].l_adv, rep[0].l_per, rep[0].l_tex, rep[0].l_d]))


def test_extractors_frozen_during_training():
    tr = Trainer(tiny_cfg())
    digests = tr.per_ext.digest(), tr.tex_ext.digest()
    data = toy_triples(frames=2)
    tr.run_epoch(data, 2)
    assert (tr.per_ext.digest(), tr.tex_ext.digest()) == digests


def test_empty_dataset_raises_without_output(tmp_path):
    out = tmp_path / "run"
    with pytest.raises(TrainingError):
        train_loop([], tiny_cfg(), out)
    assert not out.exists()


def test_train_loop_outputs_and_resume(tmp_path):
    cfg = tiny_cfg()
    data = toy_triples(frames=3)
    full = tmp_path / "full"
    train_loop(data, cfg, full)
    assert sorted(p.name for p in full.iterdir()) == sorted(
        [checkpoint_name(e) for e in (1, 2, 3)] + ["final.stck", "metrics.log"])
    log = (full / "metrics.log").read_text().splitlines()
    assert log[0] == LOG_HEADER
    assert len(log) == 1 + 3 * 2

    part = tmp_path / "part"
    train_loop(data, cfg, part, until=1)
    resumed = tmp_path / "resumed"
    train_loop(data, cfg, resumed, resume=part / checkpoint_name(1))
    tail = (resumed / "metrics.log").read_text().splitlines()[1:]
    assert tail == log[3:]
    assert (resumed / "final.stck").read_bytes() == (full / "final.stck").read_bytes()


def test_training_is_deterministic(tmp_path):
    cfg = tiny_cfg(epochs=2, halve_at=2)
    data = toy_triples(frames=2)
    train_loop(data, cfg, tmp_path / "a")
    train_loop(data, cfg, tmp_path / "b")
    for name in ("metrics.log", "final.stck"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_load_generator_checks_entries(tmp_path):
    cfg = tiny_cfg()
    tr = Trainer(cfg)
    tr.save(tmp_path / "c.stck")
    g, cfg2 = load_generator(tmp_path / "c.stck")
    assert cfg2 == cfg
    assert all(np.array_equal(g[n].data, tr.g[n].data) for n in g.names())
    entries = checkpoint.load(tmp_path / "c.stck")
    name = next(iter(tr.g.names()))
    entries[name] = entries[name][:1]
    checkpoint.save(tmp_path / "bad.stck", entries)
    with pytest.raises(checkpoint.CheckpointError, match="shape"):
        load_generator(tmp_path / "bad.stck")
