import hashlib
import math

import numpy as np
import pytest

from hopmatting.attention import BG, FG, UNKNOWN
from hopmatting.augment import synth_dataset, synth_sample
from hopmatting.autodiff import GradTape, ShapeError, Tensor, backward
from hopmatting.net import (
    ConfigError,
    EmptyUnknownRegionError,
    NetworkConfig,
    TrainSchedule,
    TrainingError,
    build,
    forward,
    load_config,
    load_model,
    loss,
    lr_at,
    parse_config,
    predict,
    receptive_field,
    save_model,
    train,
)
from hopmatting.net.config import format_config

# recorded after the first verified build: NetworkConfig(seed=0) on synth_sample(default_rng(0), 32)
GOLDEN_SHA256 = "17ca48a561ead014cf191991f4a4deb398d163735322a5ca3cd390a35ca47e57"
GOLDEN_SUM = 126.98527377386324

SMALL = dict(height=16, width=16, levels=3, enc_widths=(4, 8), window=3)


def test_config_round_trip_and_comments():
    cfg = parse_config("levels = 4  # fewer\nenc_widths = 8, 8, 8\nwindow=9\npos_enc = yes\n\nbatch_size = 2\nsamples = 5\n")
    assert cfg.network.levels == 4 and cfg.network.enc_widths == (8, 8, 8)
    assert cfg.network.window == 9 and cfg.network.pos_enc is True
    assert cfg.schedule.batch_size == 2 and cfg.data.samples == 5
    again = parse_config(format_config(cfg))
    assert again == cfg


@pytest.mark.parametrize("text", [
    "window = 4",
    "levels = 1\nenc_widths =",
    "levels = 3",
    "enc_widths = 0, 8, 8, 8",
    "colour = red",
    "no equals sign",
    "global_hop = maybe",
    "warmup_steps = 600",
    "augment = sometimes",
    "block_type = conv",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.cfg")


def test_build_is_deterministic():
    a, b = build(NetworkConfig(**SMALL, seed=3)), build(NetworkConfig(**SMALL, seed=3))
    c = build(NetworkConfig(**SMALL, seed=4))
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)
    assert any(a.params[k].data.tobytes() != c.params[k].data.tobytes() for k in a.params)


def test_default_hierarchy_has_one_global_and_three_local_blocks():
    m = build(NetworkConfig(levels=5, window=5))
    assert m.block_names() == ["global", "local0", "local1", "local2"]
    assert m.config.num_local_blocks == 3


def test_no_hop_ablation_is_pure_conv():
    m = build(NetworkConfig(**SMALL, global_hop=False, local_hop=False))
    assert m.block_names() == []
    assert not any(k.startswith("app") for k in m.params)


def test_opacity_encoder_sees_trimap_appearance_encoder_does_not():
    m = build(NetworkConfig())
    assert m.params["enc0.w"].shape[2] == 6
    assert m.params["app0.w"].shape[2] == 3


def test_golden_output():
    m = build(NetworkConfig(seed=0))
    s = synth_sample(np.random.default_rng(0), 32)
    p = predict(m, s.composite, s.trimap)
    assert hashlib.sha256(np.round(p, 8).tobytes()).hexdigest() == GOLDEN_SHA256
    assert math.isclose(p.sum(), GOLDEN_SUM, rel_tol=1e-12)


@pytest.mark.parametrize("shape", [(16, 16), (13, 19), (5, 7)])
def test_output_shape_range_and_pass_through(shape):
    rng = np.random.default_rng(0)
    m = build(NetworkConfig(**SMALL))
    img = rng.uniform(size=shape + (3,))
    tri = rng.choice(np.array([BG, UNKNOWN, FG], dtype=np.uint8), size=shape)
    out = predict(m, img, tri)
    assert out.shape == shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.all(out[tri == FG] == 1.0) and np.all(out[tri == BG] == 0.0)


def test_all_known_trimaps():
    m = build(NetworkConfig(**SMALL))
    img = np.random.default_rng(1).uniform(size=(16, 16, 3))
    assert np.all(predict(m, img, np.full((16, 16), FG, np.uint8)) == 1.0)
    assert np.all(predict(m, img, np.full((16, 16), BG, np.uint8)) == 0.0)


def test_forward_size_mismatch():
    m = build(NetworkConfig(**SMALL))
    with pytest.raises(ShapeError):
        forward(m, np.zeros((8, 8, 3)), np.zeros((8, 9), np.uint8))


def test_loss_examples():
    all_unknown = np.full((4, 4), UNKNOWN, np.uint8)
    assert float(loss(np.zeros((4, 4)), np.zeros((4, 4)), all_unknown).data) == 0.0
    assert float(loss(np.zeros((4, 4)), np.ones((4, 4)), all_unknown).data) == 1.0
    half = all_unknown.copy()
    half[:2] = BG
    assert float(loss(np.full((4, 4), 0.25), np.full((4, 4), 0.75), half).data) == 0.5
    with pytest.raises(EmptyUnknownRegionError):
        loss(np.zeros((4, 4)), np.zeros((4, 4)), np.full((4, 4), FG, np.uint8))


def test_lr_schedule():
    s = TrainSchedule(base_lr=1e-3, warmup_steps=10, total_steps=110)
    assert lr_at(0, s) == 0.0
    assert lr_at(5, s) == pytest.approx(5e-4)
    assert lr_at(10, s) == pytest.approx(1e-3)
    assert lr_at(60, s) == pytest.approx(5e-4)
    assert lr_at(110, s) == pytest.approx(0.0, abs=1e-18)
    for bad in (-1, 111):
        with pytest.raises(ValueError):
            lr_at(bad, s)


def test_zero_steps_leave_model_unchanged():
    m = build(NetworkConfig(**SMALL))
    before = m.state()
    _, curve = train(m, synth_dataset(2, 16), TrainSchedule(total_steps=0, warmup_steps=0), np.random.default_rng(0))
    assert curve == []
    assert all(before[k].tobytes() == v.tobytes() for k, v in m.state().items())


def test_training_is_deterministic_and_updates():
    data = synth_dataset(4, 16, seed=2)
    sched = TrainSchedule(total_steps=6, warmup_steps=2, batch_size=2, augment="random")
    runs = []
    for _ in range(2):
        m = build(NetworkConfig(**SMALL))
        _, curve = train(m, data, sched, np.random.default_rng(5))
        runs.append((curve, m.state()))
    assert [r.loss for r in runs[0][0]] == [r.loss for r in runs[1][0]]
    assert all(runs[0][1][k].tobytes() == runs[1][1][k].tobytes() for k in runs[0][1])
    assert any(runs[0][1][k].tobytes() != v.tobytes() for k, v in build(NetworkConfig(**SMALL)).state().items())


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_errors():
    m = build(NetworkConfig(**SMALL))
    with pytest.raises(TrainingError):
        train(m, [], TrainSchedule(total_steps=2, warmup_steps=1), np.random.default_rng(0))
    with pytest.raises(TrainingError):
        train(m, synth_dataset(2, 16), TrainSchedule(total_steps=5, warmup_steps=1, base_lr=1e300), np.random.default_rng(0))


def test_checkpoint_round_trip(tmp_path):
    m = build(NetworkConfig(**SMALL, pos_enc=True, trimap_emb=True))
    save_model(m, tmp_path / "m.hop")
    back = load_model(tmp_path / "m.hop")
    assert back.config == m.config
    s = synth_sample(np.random.default_rng(0), 16)
    assert predict(back, s.composite, s.trimap).tobytes() == predict(m, s.composite, s.trimap).tobytes()


def test_every_parameter_gets_gradient():
    m = build(NetworkConfig(**SMALL, pos_enc=True, trimap_emb=True))
    s = synth_sample(np.random.default_rng(3), 16)
    with GradTape() as tape:
        out = loss(forward(m, s.composite, s.trimap), s.alpha, s.trimap)
    grads = backward(tape, output=out)
    missing = [k for k, p in m.params.items() if p not in grads]
    assert missing == []


@pytest.mark.parametrize("levels,widths", [(3, (4, 8)), (4, (4, 4, 8))])
def test_receptive_field_bounds_conv_only_gradients(levels, widths):
    cfg = NetworkConfig(height=24, width=24, levels=levels, enc_widths=widths, global_hop=False, local_hop=False)
    m = build(cfg)
    img = np.random.default_rng(0).uniform(size=(24, 24, 3))
    tri = np.full((24, 24), UNKNOWN, np.uint8)
    for pixel in [(0, 0), (11, 13), (23, 5)]:
        x = Tensor(img, requires_grad=True)
        with GradTape() as tape:
            out = forward(m, x, tri)
            picked = out[pixel]
        g = backward(tape, output=picked)[x]
        support = np.linalg.norm(g, axis=2) > 0
        rf = receptive_field(cfg, (24, 24), pixel)
        assert rf[pixel] and not np.any(support & ~rf)
