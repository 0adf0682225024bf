import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from tempagg import dataio
from tempagg.cli import main, predict_segments
from tempagg.config import PRESETS, build_run_config
from tempagg.errors import ConfigError
from tempagg.evaluate import read_predictions


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--classes", "4", "--videos", "12", "--val-videos", "4", "--dim", "8",
                 "--fps", "5", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def trained(synth_dir):
    run = synth_dir / "run"
    code = main(["train", "--preset", "epic100-anticipation", "--features", str(synth_dir / "features"),
                 "--annotations", str(synth_dir / "train.csv"), "--checkpoint", str(run / "m.ckpt"),
                 "--num-classes", "4", "--hidden", "8", "--proj", "8", "--epochs", "2"])
    assert code == 0
    return run


def test_synth_writes_manifest(synth_dir, capsys):
    manifest = json.loads((synth_dir / "manifest.json").read_text())
    assert len([k for k in manifest if k.startswith("features/")]) == 12
    for rel, digest in manifest.items():
        assert hashlib.sha256((synth_dir / rel).read_bytes()).hexdigest() == digest


def test_train_outputs(trained):
    log = [json.loads(x) for x in (trained / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [0, 1]
    ckpt = dataio.load_checkpoint(trained / "m.ckpt")
    assert ckpt.epoch == 1 and ckpt.params.config.num_classes == 4


def test_predict_eval_fuse(synth_dir, trained, tmp_path, capsys):
    preds = tmp_path / "p.csv"
    assert main(["predict", "--checkpoint", str(trained / "m.ckpt"), "--features",
                 str(synth_dir / "features"), "--annotations", str(synth_dir / "val.csv"),
                 "--out", str(preds)]) == 0
    m = read_predictions(preds)
    assert m.scores.shape == (4, 4)
    assert main(["eval", "--predictions", str(preds), "--annotations", str(synth_dir / "val.csv"),
                 "--subsets", str(synth_dir / "subsets.json"), "--action-map",
                 str(synth_dir / "actions.csv"), "--out", str(tmp_path / "m.csv")]) == 0
    assert "overall.action.top1" in capsys.readouterr().out
    assert (tmp_path / "m.txt").exists()
    fused = tmp_path / "f.csv"
    assert main(["fuse", str(preds), str(preds), "--out", str(fused)]) == 0
    assert fused.read_bytes() == preds.read_bytes()


@pytest.mark.filterwarnings("ignore:no subset definitions")
def test_perfect_predictions_score_100(synth_dir, tmp_path, capsys):
    table = dataio.load_annotations(synth_dir / "val.csv")
    labels = table.labels()
    lines = ["segment_id," + ",".join(f"p{c}" for c in range(4))]
    for sid, y in zip(table.segment_ids, labels):
        lines.append(sid + "," + ",".join("1.0" if c == y else "0.0" for c in range(4)))
    (tmp_path / "perfect.csv").write_text("\n".join(lines) + "\n")
    assert main(["eval", "--predictions", str(tmp_path / "perfect.csv"), "--annotations",
                 str(synth_dir / "val.csv"), "--action-map", str(synth_dir / "actions.csv")]) == 0
    values = [float(x.split("=")[1]) for x in capsys.readouterr().out.splitlines() if "=" in x]
    assert values and all(v == 100.0 for v in values)


def test_predictions_ignore_future_frames(synth_dir, trained):
    ckpt = dataio.load_checkpoint(trained / "m.ckpt")
    table = dataio.load_annotations(synth_dir / "val.csv")
    seqs = dataio.load_sequences(synth_dir / "features", "rgb", table.video_ids)
    before = predict_segments(ckpt, table, seqs).scores
    for r in table:
        seq = seqs[r.video_id]
        seq.features[seq.timestamps >= r.start - 1.0] = 1e3
    after = predict_segments(ckpt, table, seqs).scores
    assert before.tobytes() == after.tobytes()


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    assert capsys.readouterr().out.strip().splitlines()[-1].startswith("PASS")


@pytest.mark.parametrize("argv", [
    ["train", "--task", "anticipation"],                       # no paths
    ["train", "--preset", "nope"],
    ["train", "--task", "recognition", "--preset", "epic100-anticipation"],
    ["predict", "--checkpoint", "/nonexistent", "--features", ".", "--annotations", ".", "--out", "x"],
    ["fuse", "/nonexistent.csv", "--out", "x"],
    ["synth", "--classes", "1", "--videos", "2", "--out", "x"],
])
def test_configuration_errors_exit_2(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    try:
        code = main(argv)
    except SystemExit as exc:  # argparse rejects bad choices itself, also with status 2
        code = exc.code
    assert code == 2
    assert not (tmp_path / "x").exists()


def test_data_error_exit_3(synth_dir, tmp_path):
    ann = tmp_path / "a.csv"
    ann.write_text((synth_dir / "val.csv").read_text().replace("video_", "missing_"))
    code = main(["train", "--preset", "epic100-anticipation", "--features", str(synth_dir / "features"),
                 "--annotations", str(ann), "--checkpoint", str(tmp_path / "run" / "m.ckpt"),
                 "--hidden", "4", "--proj", "4", "--epochs", "1"])
    assert code == 3
    assert not (tmp_path / "run" / "m.ckpt").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "tempagg", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout


class TestConfig:
    def test_presets(self):
        cfg = build_run_config(preset="breakfast-activity")
        assert cfg.sampling.spanning_scales == (10, 15, 20) and cfg.train.epochs == 25
        assert set(PRESETS) == {"epic100-anticipation", "epic100-recognition", "breakfast-activity"}

    def test_layering(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[run]\npreset = epic100-recognition\nfeatures = feats\n"
                       "[train]\nepochs = 3\nlr0 = 0.001\n[sampling]\nspanning_scales = 2, 4\n"
                       "[model]\nhidden = 64\n")
        cfg = build_run_config(config_path=ini, overrides={"epochs": 7, "proj": 32})
        assert cfg.task == "recognition" and cfg.features == tmp_path / "feats"
        assert cfg.train.epochs == 7 and cfg.train.lr0 == 0.001
        assert cfg.sampling.spanning_scales == (2, 4) and (cfg.hidden, cfg.proj) == (64, 32)

    @pytest.mark.parametrize("text,field", [
        ("[train]\nepochs = many\n", "train.epochs"),
        ("[train]\nmomentum = 1\n", "train.momentum"),
        ("[run]\nmodality = depth\n", "modality"),
        ("[sampling]\nk_recent = 0\n", "invalid setting"),
    ])
    def test_errors_name_the_field(self, tmp_path, text, field):
        ini = tmp_path / "bad.ini"
        ini.write_text("[run]\npreset = epic100-anticipation\n" + text if not text.startswith("[run]")
                       else text.replace("[run]\n", "[run]\npreset = epic100-anticipation\n"))
        with pytest.raises(ConfigError, match=field):
            build_run_config(config_path=ini)
