"""End-to-end checks of the vitc command line and its JSON artifacts.

Usage: python3 test_cli.py <vitc executable> <schemas dir>
"""

import csv
import filecmp
import json
import os
import shutil
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import jsonschema

VITC = ""
SCHEMAS = Path()

TINY_TOML = """
[model.backbone]
patch = 4
dim = 16
depth = 1
input_size = 16

[model.conditioning]
blocks = 2
heads = 2
mlp_ratio = 2

[model.unet]
levels = 3
base_channels = 4
max_channels = 8
fusion_channels = 4

[train]
lr = 3e-3
batch_size = 2
max_epochs = 2
iters_per_epoch = 2
"""


def run(*args, check=True):
    proc = subprocess.run([VITC, *map(str, args)], capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"vitc {' '.join(map(str, args))} -> {proc.returncode}\n{proc.stderr}")
    return proc


def load(path):
    with open(path) as f:
        return json.load(f)


def validate(path, schema):
    jsonschema.validate(load(path), load(SCHEMAS / f"{schema}.schema.json"))


class CliTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = Path(tempfile.mkdtemp(prefix="vitc_cli_"))
        cls.data = cls.tmp / "data"
        run("generate", "--out", cls.data, "--volumes", 4, "--test-volumes", 2, "--classes", 3, "--seed", 5,
            "--depth", 3, "--height", 16, "--width", 16)
        cls.config = cls.tmp / "tiny.toml"
        cls.config.write_text(TINY_TOML)
        cls.run_dir = cls.tmp / "run"
        run("train", "--config", cls.config, "--data", cls.data, "--out", cls.run_dir, "--seeds", "0,1")

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)

    def test_generate_is_deterministic(self):
        other = self.tmp / "data_again"
        run("generate", "--out", other, "--volumes", 4, "--test-volumes", 2, "--classes", 3, "--seed", 5,
            "--depth", 3, "--height", 16, "--width", 16)
        self.assertEqual(load(self.data / "manifest.json"), load(other / "manifest.json"))
        for rec in load(other / "manifest.json")["volumes"]:
            for key in ("image_path", "label_path"):
                self.assertTrue(filecmp.cmp(self.data / rec[key], other / rec[key], shallow=False), rec[key])
        validate(other / "run_manifest.json", "run_manifest")

    def test_generate_usage_errors(self):
        self.assertEqual(run("generate", "--out", self.tmp / "zero", "--classes", 0, check=False).returncode, 2)
        self.assertEqual(run("generate", "--out", self.data, check=False).returncode, 2)
        self.assertEqual(run("frobnicate", check=False).returncode, 2)

    def test_train_artifacts_match_schemas(self):
        validate(self.run_dir / "aggregate.json", "aggregate")
        validate(self.run_dir / "run_manifest.json", "run_manifest")
        agg = load(self.run_dir / "aggregate.json")
        self.assertEqual(agg["seeds"], [0, 1])
        self.assertEqual(agg["miou"]["n"], 2)
        self.assertEqual(sorted(agg["per_class_iou"]), sorted(["sphere", "box", "tube"]))
        for seed in (0, 1):
            d = self.run_dir / f"seed_{seed}"
            validate(d / "metrics.json", "metrics")
            validate(d / "history.json", "history")
            for f in ("best.ckpt", "last.ckpt"):
                self.assertEqual((d / f).read_bytes()[:8], b"VITCCKPT")
            history = load(d / "history.json")
            with open(d / "history.csv") as f:
                rows = list(csv.DictReader(f))
            self.assertEqual(len(rows), len(history))
            for row, rec in zip(rows, history):
                self.assertEqual(int(row["epoch"]), rec["epoch"])
                self.assertAlmostEqual(float(row["val_miou"]), rec["val_miou"], places=12)
        for run_metrics in agg["runs"]:
            jsonschema.validate(run_metrics, load(SCHEMAS / "metrics.schema.json"))

    def test_eval_predictions_on_ground_truth_is_perfect(self):
        preds = self.tmp / "preds"
        preds.mkdir(exist_ok=True)
        for rec in load(self.data / "manifest.json")["volumes"]:
            if rec["split"] == "test":
                shutil.copy(self.data / rec["label_path"], preds / f"{rec['volume_id']}.nii.gz")
        out = self.tmp / "eval_gt"
        run("eval", "--predictions", preds, "--data", self.data, "--split", "test", "--out", out)
        validate(out / "metrics.json", "metrics")
        m = load(out / "metrics.json")
        self.assertEqual(m["miou"], 1.0)
        self.assertTrue(all(v == 1.0 for v in m["per_class_iou"].values()))

    def test_eval_checkpoint(self):
        out = self.tmp / "eval_ckpt"
        run("eval", "--checkpoint", self.run_dir / "seed_0" / "best.ckpt", "--data", self.data, "--out", out)
        validate(out / "metrics.json", "metrics")
        self.assertEqual(run("eval", "--data", self.data, check=False).returncode, 2)

    def test_predict_two_structures(self):
        rec = next(r for r in load(self.data / "manifest.json")["volumes"] if r["split"] == "test")
        out = self.tmp / "predict"
        run("predict", "--checkpoint", self.run_dir / "seed_0" / "best.ckpt", "--volume", self.data / rec["image_path"],
            "--structures", "sphere,tube", "--out", out)
        self.assertTrue((out / "mask_sphere.nii.gz").exists())
        self.assertTrue((out / "mask_tube.nii.gz").exists())
        self.assertFalse((out / "mask_box.nii.gz").exists())
        self.assertTrue((out / "labelmap.nii.gz").exists())
        self.assertEqual(set(load(out / "labelmap.json").values()), {"sphere", "tube"})
        self.assertEqual(len(list((out / "overlays").glob("slice_*.png"))), 3)
        validate(out / "run_manifest.json", "run_manifest")

    def test_predict_unknown_structure(self):
        rec = load(self.data / "manifest.json")["volumes"][0]
        proc = run("predict", "--checkpoint", self.run_dir / "seed_0" / "best.ckpt", "--volume",
                   self.data / rec["image_path"], "--structures", "liver", "--out", self.tmp / "bad_predict",
                   check=False)
        self.assertEqual(proc.returncode, 2)
        self.assertIn("liver", proc.stderr)

    def test_expand_report(self):
        stage1 = self.tmp / "stage1"
        run("train", "--config", self.config, "--data", self.data, "--out", stage1, "--seeds", 0,
            "--classes", "sphere,box")
        out = self.tmp / "expand"
        run("expand", "--checkpoint", stage1 / "seed_0" / "best.ckpt", "--new-classes", "tube", "--data", self.data,
            "--out", out)
        validate(out / "expand_report.json", "expand_report")
        validate(out / "history.json", "history")
        rep = load(out / "expand_report.json")
        self.assertEqual(sorted(rep["stage1_classes"]["per_class_iou"]), ["box", "sphere"])
        self.assertEqual(list(rep["new_classes"]["per_class_iou"]), ["tube"])
        dup = run("expand", "--checkpoint", stage1 / "seed_0" / "best.ckpt", "--new-classes", "box", "--data",
                  self.data, "--out", self.tmp / "dup", check=False)
        self.assertEqual(dup.returncode, 2)

    def test_bad_config(self):
        bad = self.tmp / "bad.toml"
        bad.write_text("[train]\nlr = -1.0\n")
        proc = run("train", "--config", bad, "--data", self.data, "--out", self.tmp / "bad_run", check=False)
        self.assertEqual(proc.returncode, 3)
        unknown = self.tmp / "unknown.toml"
        unknown.write_text("[train]\nlearning_rate = 1.0\n")
        proc = run("train", "--config", unknown, "--data", self.data, "--out", self.tmp / "bad_run2", check=False)
        self.assertEqual(proc.returncode, 3)
        self.assertIn("learning_rate", proc.stderr)

    def test_resume_continues_history(self):
        out = self.tmp / "resumed"
        run("train", "--config", self.config, "--data", self.data, "--out", out, "--seeds", 0,
            "--resume", self.run_dir / "seed_0" / "last.ckpt")
        history = load(out / "seed_0" / "history.json")
        self.assertEqual([h["epoch"] for h in history], [1, 2, 3, 4])
        self.assertEqual(history[:2], load(self.run_dir / "seed_0" / "history.json"))


if __name__ == "__main__":
    VITC = os.path.abspath(sys.argv.pop(1))
    SCHEMAS = Path(sys.argv.pop(1))
    unittest.main(verbosity=2)
