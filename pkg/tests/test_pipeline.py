import json
import logging
import subprocess
import sys

import numpy as np
import pytest
import torch
from PIL import Image

from stdmmf.encoders import extract_pyramid
from stdmmf.errors import CheckpointError, ConfigError, DataError, TrainingDiverged
from stdmmf.metrics import METRIC_KEYS, MetricReport
from stdmmf.pipeline import checkpoint as ck
from stdmmf.pipeline.cli import main
from stdmmf.pipeline.config import TrainConfig, format_config, load_config, parse_config
from stdmmf.pipeline.data import SampleLoader, clip_groups, load_dataset, load_mask, split_by_video
from stdmmf.pipeline.evaluate import evaluate
from stdmmf.pipeline.infer import infer, quantize
from stdmmf.pipeline.model import build_model, forward_full
from stdmmf.pipeline.synthetic import write_dataset
from stdmmf.pipeline.train import compute_loss, make_optimizer, thread_cap, train

from conftest import gen


@pytest.fixture
def dataset_root(tmp_path):
    return write_dataset(tmp_path / "data", n_videos=2, n_frames=4, size=32)


def _batch(cfg, samples):
    return SampleLoader(cfg.input_size, cfg.norm_mean, cfg.norm_std).batch(samples)


# config

def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.learning_rate, cfg.momentum, cfg.weight_decay) == (65, 1e-4, 0.9, 1e-5)
    assert (cfg.clip_len, cfg.input_size, cfg.loss_w1, cfg.loss_w2) == (4, 352, 0.6, 0.4)


def test_config_parse_and_round_trip():
    cfg = parse_config("# comment\nepochs = 3\nlearning_rate = 0.01  # inline\n"
                       "backbone = tiny\ninput_size = 64\ndisable_bma = true\nnorm_mean = 0.5, 0.5, 0.5\n")
    assert (cfg.epochs, cfg.learning_rate, cfg.backbone, cfg.disable_bma) == (3, 0.01, "tiny", True)
    assert cfg.norm_mean == (0.5, 0.5, 0.5)
    assert parse_config(format_config(cfg)) == cfg


def test_config_unknown_key_is_error():
    with pytest.raises(ConfigError) as exc:
        parse_config("epochs = 2\nlearnig_rate = 0.1\n")
    assert exc.value.field == "learnig_rate"
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})


@pytest.mark.parametrize("text,field", [
    ("input_size = 100", "input_size"),
    ("learning_rate = -1", "learning_rate"),
    ("gate_threshold = 2", "gate_threshold"),
    ("epochs = many", "epochs"),
    ("backbone = vgg", "backbone"),
    ("disable_ila = perhaps", "disable_ila"),
])
def test_config_bad_values(text, field):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.field == field


def test_load_config_file(tmp_path):
    path = tmp_path / "c.txt"
    path.write_text("seed = 7\n")
    assert load_config(path).seed == 7


# data

def test_dataset_pairing_skips_frames_without_flow(tmp_path, caplog):
    root = write_dataset(tmp_path / "d", n_videos=1, n_frames=4)
    with caplog.at_level(logging.WARNING):
        samples = load_dataset(root)
    # five frames on disk, four flows
    assert len(list((root / "video_00" / "frames").iterdir())) == 5
    assert [s.frame_index for s in samples] == [1, 2, 3, 4]
    assert "no flow" in caplog.text


def test_dataset_split_subdirectory(tmp_path):
    write_dataset(tmp_path / "d" / "test", n_videos=1, n_frames=2)
    assert len(load_dataset(tmp_path / "d", "test")) == 2


def test_dataset_empty_and_missing_root(tmp_path, caplog):
    (tmp_path / "empty").mkdir()
    with caplog.at_level(logging.WARNING):
        assert load_dataset(tmp_path / "empty") == []
    assert "no samples" in caplog.text
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")


def test_dataset_size_mismatch(tmp_path):
    root = write_dataset(tmp_path / "d", n_videos=1, n_frames=2)
    Image.fromarray(np.zeros((16, 16), np.uint8)).save(root / "video_00" / "gt" / "00001.png")
    with pytest.raises(DataError, match="00001|frame 1"):
        load_dataset(root)


def test_mask_binarization(tmp_path):
    path = tmp_path / "m.png"
    Image.fromarray(np.array([[0, 127, 128, 255]], np.uint8)).save(path)
    assert load_mask(path).tolist() == [[0.0, 0.0, 1.0, 1.0]]


def test_clip_groups_and_video_split(dataset_root):
    samples = load_dataset(dataset_root)
    groups = clip_groups(samples, 3)
    assert [len(g) for g in groups] == [3, 3]
    assert all(len({s.video_id for s in g}) == 1 for g in groups)
    train_s, val_s = split_by_video(samples, 0.5)
    assert {s.video_id for s in train_s}.isdisjoint({s.video_id for s in val_s})
    assert len(train_s) + len(val_s) == len(samples)


# model wiring

def test_forward_ablations(tiny_train_config, dataset_root):
    samples = load_dataset(dataset_root)[:2]
    batch = _batch(tiny_train_config, samples)
    base = build_model(tiny_train_config).eval()
    with torch.no_grad():
        full = forward_full(base, batch["frame"], batch["flow"])
        assert full.out.shape == (2, 1, 32, 32)
        assert full.f_sal is not None

        cfg = tiny_train_config.replace(disable_temporal=True)
        m = build_model(cfg).eval()
        r = forward_full(m, batch["frame"], batch["flow"])
        iw = r.diagnostics["interlayer_weight"]
        assert torch.equal(iw, torch.tensor([[1.0, 0.0]] * 5).expand_as(iw))
        assert r.f_sal is None

        cfg = tiny_train_config.replace(disable_ilw=True)
        r = forward_full(build_model(cfg).eval(), batch["frame"], batch["flow"])
        assert torch.equal(r.diagnostics["interlayer_weight"], torch.full((2, 5, 2), 0.5))

        cfg = tiny_train_config.replace(disable_bma=True)
        assert forward_full(build_model(cfg).eval(), batch["frame"], batch["flow"]).diagnostics["bi_att"] is None

        cfg = tiny_train_config.replace(disable_ila=True)
        m = build_model(cfg).eval()
        r = forward_full(m, batch["frame"], batch["flow"])
        assert r.diagnostics["attentions"] is None
        for a, b in zip(r.diagnostics["spatial_levels"], extract_pyramid(m.spatial, batch["frame"])):
            assert torch.equal(a, b)


def test_build_model_seeded(tiny_train_config):
    a = build_model(tiny_train_config)
    b = build_model(tiny_train_config)
    c = build_model(tiny_train_config.replace(seed=1))
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(torch.equal(sa[k], sb[k]) for k in sa)
    assert any(not torch.equal(sa[k], sc[k]) for k in sa)


# checkpoints

def _ckpt(cfg):
    model = build_model(cfg)
    return model, ck.make_checkpoint(model, cfg, epoch=3, generator=gen(5))


def test_checkpoint_round_trip_is_byte_identical(tmp_path, tiny_train_config):
    model, ckpt = _ckpt(tiny_train_config)
    path = ck.save_checkpoint(ckpt, tmp_path / "a.ckpt")
    blob = path.read_bytes()
    assert blob[:8] == b"STDMMFCK"
    loaded = ck.load_checkpoint(path)
    assert loaded.epoch == 3 and loaded.config == tiny_train_config.to_dict()
    assert ck.encode(loaded) == blob
    fresh = build_model(tiny_train_config.replace(seed=9))
    ck.restore_model(loaded, fresh)
    for k, v in ck.model_tensors(model).items():
        assert torch.equal(v, ck.model_tensors(fresh)[k])
    g = torch.Generator()
    ck.restore_model(loaded, fresh, generator=g)
    assert torch.equal(g.get_state(), gen(5).get_state())


def test_checkpoint_truncated(tmp_path, tiny_train_config):
    _, ckpt = _ckpt(tiny_train_config)
    blob = ck.encode(ckpt)
    for cut in (4, 30, len(blob) - 7):
        with pytest.raises(CheckpointError):
            ck.decode(blob[:cut])
    with pytest.raises(CheckpointError):
        ck.decode(b"NOTACKPT" + blob[8:])
    with pytest.raises(CheckpointError):
        ck.load_checkpoint(tmp_path / "missing.ckpt")


def test_checkpoint_mismatch_lists_every_problem(tiny_train_config):
    model, ckpt = _ckpt(tiny_train_config)
    ckpt.tensors["extra.weight"] = torch.zeros(3)
    name = next(iter(sorted(k for k in ckpt.tensors if k.endswith("conv1.weight"))))
    ckpt.tensors[name] = torch.zeros(1, 1, 1, 1)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    target = build_model(tiny_train_config.replace(seed=3))
    snapshot = {k: v.clone() for k, v in target.state_dict().items()}
    with pytest.raises(CheckpointError) as exc:
        ck.restore_model(ckpt, target)
    assert len(exc.value.problems) == 2
    assert "extra.weight" in str(exc.value) and name in str(exc.value)
    # nothing copied on failure
    assert all(torch.equal(v, snapshot[k]) for k, v in target.state_dict().items())
    assert all(torch.equal(v, before[k]) for k, v in model.state_dict().items())


def test_checkpoint_save_unwritable(tmp_path, tiny_train_config):
    _, ckpt = _ckpt(tiny_train_config)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        ck.save_checkpoint(ckpt, blocker / "sub" / "a.ckpt")


# training

def test_sgd_step_matches_gradient(tiny_train_config, dataset_root):
    cfg = tiny_train_config.replace(learning_rate=0.01, weight_decay=0.0)
    model = build_model(cfg).train()
    opt = make_optimizer(model, cfg)
    batch = _batch(cfg, load_dataset(dataset_root)[:4])
    report, _ = compute_loss(model, batch, cfg)
    opt.zero_grad()
    report.total.backward()
    before = {k: p.detach().clone() for k, p in model.named_parameters()}
    grads = {k: p.grad.clone() for k, p in model.named_parameters()}
    opt.step()
    for k, p in model.named_parameters():
        assert torch.allclose(p.detach() - before[k], -0.01 * grads[k], atol=1e-7, rtol=1e-5)


def test_zero_learning_rate_keeps_parameters(tiny_train_config, dataset_root):
    cfg = tiny_train_config.replace(learning_rate=0.0)
    res = train(cfg, load_dataset(dataset_root), max_steps=2)
    ref = build_model(cfg)
    got = dict(res.model.named_parameters())
    assert all(torch.equal(p, got[k]) for k, p in ref.named_parameters())


def test_train_writes_checkpoints(tmp_path, tiny_train_config, dataset_root):
    cfg = tiny_train_config.replace(epochs=2, clip_len=2)
    res = train(cfg, load_dataset(dataset_root), out_dir=tmp_path / "run")
    assert [p.name for p in res.checkpoint_paths] == ["epoch_001.ckpt", "epoch_002.ckpt"]
    assert (tmp_path / "run" / "last.ckpt").read_bytes() == res.checkpoint_paths[-1].read_bytes()
    assert len(res.history) == 8
    assert all(np.isfinite(h["total"]) for h in res.history)
    h = res.history[0]
    assert h["total"] == pytest.approx(0.6 * h["loss1"] + 0.4 * h["loss2"] + h["loss3"], rel=1e-6)
    assert ck.load_checkpoint(res.checkpoint_paths[0]).optimizer


def test_train_divergence_reports_diagnostics(tiny_train_config, dataset_root):
    cfg = tiny_train_config.replace(learning_rate=1e30, momentum=0.0)
    with pytest.raises(TrainingDiverged) as exc:
        train(cfg.replace(epochs=5), load_dataset(dataset_root))
    assert exc.value.step >= 1
    assert "max |param|" in exc.value.diagnostics


def test_train_empty_dataset(tiny_train_config):
    with pytest.raises(ValueError):
        train(tiny_train_config, [])


def test_thread_cap_env(monkeypatch):
    monkeypatch.delenv("STDMMF_NUM_THREADS", raising=False)
    assert thread_cap() is None
    monkeypatch.setenv("STDMMF_NUM_THREADS", "3")
    assert thread_cap() == 3
    monkeypatch.setenv("STDMMF_NUM_THREADS", "0")
    with pytest.raises(ValueError):
        thread_cap()


# inference

def _half_checkpoint(cfg):
    model = build_model(cfg)
    with torch.no_grad():
        model.decoder.out_conv.weight.zero_()
        model.decoder.out_conv.bias.zero_()
    return ck.make_checkpoint(model, cfg)


def test_quantize():
    assert quantize(np.array([0.0, 0.5, 1.0, 1 / 510, 0.999])).tolist() == [0, 128, 255, 1, 255]


def test_infer_constant_half(tmp_path, tiny_train_config, dataset_root):
    ckpt = _half_checkpoint(tiny_train_config)
    samples = load_dataset(dataset_root, "test")
    written = infer(ckpt, samples, tmp_path / "out")
    assert len(written) == len(samples) == 8
    assert written[0] == tmp_path / "out" / "video_00" / "00001.png"
    for p in written:
        arr = np.asarray(Image.open(p))
        assert arr.shape == (32, 32) and np.all(arr == 128)
    assert not any((tmp_path / "out").rglob("overlay"))
    first = [p.read_bytes() for p in written]
    infer(ckpt, samples, tmp_path / "out")
    assert [p.read_bytes() for p in written] == first


def test_infer_overlay(tmp_path, tiny_train_config, dataset_root):
    ckpt = _half_checkpoint(tiny_train_config)
    infer(ckpt, load_dataset(dataset_root, "test")[:1], tmp_path / "out", overlay_frames=True)
    ov = tmp_path / "out" / "video_00" / "overlay" / "00001.png"
    frame = np.asarray(Image.open(dataset_root / "video_00" / "frames" / "00001.png"), dtype=np.float64)
    expected = np.floor(frame * 0.7 + np.array([255.0, 0, 0]) * 0.3 + 0.5)
    # the overlay blends the unquantized 0.5 map
    assert np.array_equal(np.asarray(Image.open(ov)), expected.astype(np.uint8))


# evaluation

def _write_maps(root, arrays):
    for key, arr in arrays.items():
        p = root / f"{key}.png"
        p.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(p)


def test_evaluate_self_comparison(tmp_path, dataset_root):
    res = evaluate(dataset_root, dataset_root)
    assert res.complete
    r = res.report
    assert r.frames == 10
    assert r.mae == 0.0
    assert r.max_f == pytest.approx(1.0)
    assert r.sm == pytest.approx(1.0, abs=1e-6)
    assert r.max_em == pytest.approx(1.0, abs=1e-6)


def test_evaluate_matches_in_memory_oracle(tmp_path):
    import oracles
    rng = np.random.default_rng(0)
    preds, gts = {}, {}
    for i in range(10):
        preds[f"v/{i:05d}"] = rng.integers(0, 256, (8, 8)).astype(np.uint8)
        gts[f"v/gt/{i:05d}"] = ((rng.random((8, 8)) < 0.4) * 255).astype(np.uint8)
    _write_maps(tmp_path / "pred", preds)
    _write_maps(tmp_path / "gt", gts)
    rep = evaluate(tmp_path / "pred", tmp_path / "gt", workers=3).report
    pairs = [(preds[f"v/{i:05d}"] / 255.0, gts[f"v/gt/{i:05d}"] / 255.0) for i in range(10)]
    assert rep.mae == pytest.approx(np.mean([oracles.mae(p, g) for p, g in pairs]), abs=1e-12)
    assert rep.sm == pytest.approx(np.mean([oracles.s_measure(p, g) for p, g in pairs]), abs=1e-6)
    f = np.mean([oracles.f_curve(p, g) for p, g in pairs], axis=0)
    assert rep.max_f == pytest.approx(f.max(), abs=1e-9)
    assert rep.mean_f == pytest.approx(f.mean(), abs=1e-9)
    single = evaluate(tmp_path / "pred", tmp_path / "gt", workers=1).report
    assert single.as_dict() == rep.as_dict()


def test_evaluate_unmatched_and_resize(tmp_path):
    _write_maps(tmp_path / "pred", {"a/1": np.full((4, 4), 255, np.uint8), "a/2": np.zeros((4, 4), np.uint8)})
    _write_maps(tmp_path / "gt", {"a/1": np.full((8, 8), 255, np.uint8), "a/3": np.zeros((8, 8), np.uint8)})
    res = evaluate(tmp_path / "pred", tmp_path / "gt")
    assert not res.complete
    assert res.unmatched_pred == ["a/2"] and res.unmatched_gt == ["a/3"]
    assert res.report.frames == 1 and res.report.mae == 0.0
    with pytest.raises(ValueError):
        evaluate(tmp_path / "pred" / "a", tmp_path / "gt")


# command line

def test_cli_end_to_end(tmp_path, dataset_root, capsys, monkeypatch):
    monkeypatch.setenv("STDMMF_NUM_THREADS", "1")
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("backbone = tiny\ninput_size = 32\nepochs = 1\nclip_len = 2\n")
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(dataset_root), "--out", str(run),
                 "--deterministic", "--disable-bma"]) == 0
    assert (run / "epoch_001.ckpt").exists()
    assert "disable_bma = True" in (run / "config.txt").read_text()
    log = [json.loads(line) for line in (run / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 4 and set(log[0]) >= {"loss1", "loss2", "loss3", "total"}

    pred = tmp_path / "pred"
    assert main(["infer", "--checkpoint", str(run / "last.ckpt"), "--data", str(dataset_root),
                 "--out", str(pred), "--overlay"]) == 0
    assert len(list(pred.glob("*/*.png"))) == 8
    assert len(list(pred.glob("*/overlay/*.png"))) == 8

    report = tmp_path / "report.txt"
    code = main(["eval", "--pred", str(pred), "--gt", str(dataset_root), "--report", str(report)])
    # frame 0 of each video has ground truth but no prediction
    assert code == 2
    text = report.read_text()
    assert [ln.split(" = ")[0] for ln in text.splitlines()] == list(METRIC_KEYS)
    rep = MetricReport.from_text(text)
    assert 0 <= rep.mae <= 1

    ov = tmp_path / "ov"
    assert main(["export-overlay", "--pred", str(pred), "--frames", str(dataset_root), "--out", str(ov)]) == 0
    assert len(list(ov.glob("*/*.png"))) == 8


def test_cli_rejects_unknown_config_key(tmp_path, dataset_root):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("epochz = 1\n")
    with pytest.raises(ConfigError, match="epochz"):
        main(["train", "--config", str(cfg), "--data", str(dataset_root), "--out", str(tmp_path / "r")])


def test_cli_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "stdmmf", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("train", "infer", "eval", "export-overlay"):
        assert cmd in out.stdout
