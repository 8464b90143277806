import json

import pytest
from axml_builder import compile_manifest
from conftest import make_zip
from dex_builder import build_dex

from droidae.cli import main
from droidae.detector import load_detector
from droidae.features import default_vocabulary, read_vector_records

MALWARE_MANIFEST = """<manifest xmlns:android="http://schemas.android.com/apk/res/android"
    package="com.fixture.mal">
  <uses-permission android:name="android.permission.SEND_SMS"/>
  <uses-permission android:name="android.permission.INTERNET"/>
  <application>
    <receiver android:name=".Boot">
      <intent-filter>
        <action android:name="android.intent.action.BOOT_COMPLETED"/>
      </intent-filter>
    </receiver>
  </application>
</manifest>"""


def malware_apk() -> bytes:
    return make_zip(
        {
            "AndroidManifest.xml": compile_manifest(MALWARE_MANIFEST),
            "classes.dex": build_dex(
                [("Landroid/telephony/TelephonyManager;", "getDeviceId")]
            ),
        }
    )


@pytest.fixture()
def synth_dataset(tmp_path):
    path = tmp_path / "data.csv"
    assert main(["synth", "200", "200", "--seed", "9", "--noise", "0.05",
                 "--out", str(path)]) == 0
    return path


@pytest.fixture()
def trained_model(tmp_path, synth_dataset):
    model_path = tmp_path / "model.json"
    code = main(
        ["train", str(synth_dataset), "--model-out", str(model_path),
         "--seed", "5", "--epochs", "40"]
    )
    assert code == 0
    return model_path


class TestSynth:
    def test_writes_expected_counts(self, synth_dataset):
        fingerprint, records = read_vector_records(synth_dataset)
        assert fingerprint == default_vocabulary().fingerprint
        assert len(records) == 400
        labels = [r[1] for r in records]
        assert labels.count("benign") == 200
        assert labels.count("malicious") == 200

    def test_byte_identical_rerun(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        for path in (a, b):
            assert main(["synth", "50", "50", "--seed", "3", "--out", str(path)]) == 0
        assert a.read_bytes() == b.read_bytes()


class TestTrain:
    def test_outputs_exist(self, tmp_path, trained_model):
        model = load_detector(trained_model)
        assert model.network.parameter_count == 42_440
        assert model.threshold >= 0
        payload = json.loads(trained_model.read_text())
        assert payload["parameter_count"] == 42_440
        assert "run_manifest" in payload
        curve = (tmp_path / "model.json.loss.tsv").read_text().splitlines()
        assert len([l for l in curve if not l.startswith("#")]) == 40

    def test_byte_identical_rerun(self, tmp_path, synth_dataset):
        a, b = tmp_path / "ma.json", tmp_path / "mb.json"
        for path in (a, b):
            assert main(
                ["train", str(synth_dataset), "--model-out", str(path),
                 "--seed", "5", "--epochs", "10"]
            ) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_benign_only_dataset_exits_2(self, tmp_path):
        path = tmp_path / "benign.csv"
        assert main(["synth", "20", "20", "--out", str(path)]) == 0
        fingerprint, records = read_vector_records(path)
        benign_only = tmp_path / "only.csv"
        with open(benign_only, "w") as handle:
            handle.write("#vocabulary-fingerprint=%s\n" % fingerprint)
            for app_id, label, bits in records:
                if label == "benign":
                    handle.write("%s,%s,%s\n" % (app_id, label, ",".join(map(str, bits))))
        code = main(["train", str(benign_only), "--model-out", str(tmp_path / "m.json")])
        assert code == 2

    def test_divergent_config_exits_3(self, tmp_path, synth_dataset, monkeypatch):
        # Force the abort path deterministically: a linear stack with a huge
        # step size explodes within a few batches.
        import droidae.cli as cli_module

        original = cli_module.build_network

        def linear_stack(sizes, _activations, **kwargs):
            return original(sizes, ("linear",) * (len(sizes) - 1), **kwargs)

        monkeypatch.setattr(cli_module, "build_network", linear_stack)
        code = main(
            ["train", str(synth_dataset), "--model-out", str(tmp_path / "m.json"),
             "--learning-rate", "1e6", "--epochs", "5"]
        )
        assert code == 3

    def test_missing_dataset_exits_2(self, tmp_path):
        code = main(
            ["train", str(tmp_path / "absent.csv"), "--model-out", str(tmp_path / "m.json")]
        )
        assert code == 2


class TestClassify:
    def test_training_sample_is_malicious(self, tmp_path, synth_dataset, trained_model, capsys):
        fingerprint, records = read_vector_records(synth_dataset)
        sample = next(r for r in records if r[1] == "malicious")
        single = tmp_path / "one.csv"
        with open(single, "w") as handle:
            handle.write("#vocabulary-fingerprint=%s\n" % fingerprint)
            handle.write("%s,unknown,%s\n" % (sample[0], ",".join(map(str, sample[2]))))
        assert main(["classify", str(trained_model), str(single)]) == 0
        line = capsys.readouterr().out.strip()
        app_id, error, verdict = line.split("\t")
        assert app_id == sample[0]
        assert verdict == "malicious"
        assert float(error) >= 0

    def test_zero_vector_is_benign(self, tmp_path, trained_model, capsys):
        vocab = default_vocabulary()
        single = tmp_path / "zero.csv"
        with open(single, "w") as handle:
            handle.write("#vocabulary-fingerprint=%s\n" % vocab.fingerprint)
            handle.write("void,unknown,%s\n" % ",".join(["0"] * 40))
        assert main(["classify", str(trained_model), str(single)]) == 0
        verdict = capsys.readouterr().out.strip().split("\t")[-1]
        assert verdict == "benign"

    def test_fingerprint_mismatch_exits_2(self, tmp_path, trained_model, capsys):
        single = tmp_path / "alien.csv"
        with open(single, "w") as handle:
            handle.write("#vocabulary-fingerprint=ffffffff\n")
            handle.write("odd,unknown,%s\n" % ",".join(["0"] * 40))
        assert main(["classify", str(trained_model), str(single)]) == 2
        err = capsys.readouterr().err
        assert "ffffffff" in err
        assert load_detector(trained_model).vocabulary_fingerprint in err

    def test_classifies_apk_directly(self, tmp_path, trained_model, capsys):
        apk_path = tmp_path / "sample.apk"
        apk_path.write_bytes(malware_apk())
        assert main(["classify", str(trained_model), str(apk_path)]) == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("sample.apk\t")
        assert line.split("\t")[2] in ("benign", "malicious")


class TestExtract:
    def test_mixed_directory(self, tmp_path, capsys):
        indir = tmp_path / "apps"
        indir.mkdir()
        (indir / "good.apk").write_bytes(malware_apk())
        (indir / "junk.txt").write_bytes(b"not an archive")
        out = tmp_path / "vectors.csv"
        assert main(["extract", str(indir), "--out", str(out)]) == 0
        fingerprint, records = read_vector_records(out)
        assert fingerprint == default_vocabulary().fingerprint
        assert [r[0] for r in records] == ["good.apk"]
        assert "junk.txt" in capsys.readouterr().err
        assert (tmp_path / "vectors.csv.log").exists()

    def test_expected_bits_set(self, tmp_path):
        indir = tmp_path / "apps"
        indir.mkdir()
        (indir / "mal.apk").write_bytes(malware_apk())
        out = tmp_path / "vectors.csv"
        assert main(["extract", str(indir), "--out", str(out)]) == 0
        vocab = default_vocabulary()
        _, records = read_vector_records(out)
        bits = records[0][2]
        assert bits[vocab.index_of("perm:SEND_SMS")] == 1
        assert bits[vocab.index_of("perm:INTERNET")] == 1
        assert bits[vocab.index_of("intent:BOOT_COMPLETED")] == 1
        assert bits[vocab.index_of("api:telephony")] == 1
        assert bits[vocab.index_of("cert:invalid")] == 1  # unsigned fixture
        assert bits[vocab.index_of("asset:embedded-apk")] == 0

    def test_empty_directory_exits_2(self, tmp_path, capsys):
        indir = tmp_path / "empty"
        indir.mkdir()
        code = main(["extract", str(indir), "--out", str(tmp_path / "v.csv")])
        assert code == 2
        assert "no inputs processed" in capsys.readouterr().err

    def test_byte_identical_rerun(self, tmp_path):
        indir = tmp_path / "apps"
        indir.mkdir()
        (indir / "a.apk").write_bytes(malware_apk())
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        for out in (out_a, out_b):
            assert main(["extract", str(indir), "--out", str(out)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()


class TestEvaluate:
    def test_table_has_four_rows(self, synth_dataset, capsys):
        code = main(
            ["evaluate", str(synth_dataset), "--seeds", "1",
             "--epochs", "10"]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].split() == ["split", "accuracy", "f1"]
        assert [l.split()[0] for l in lines[1:]] == [
            "80%-20%", "70%-30%", "60%-40%", "50%-50%"
        ]

    def test_single_split_single_row(self, synth_dataset, capsys):
        code = main(
            ["evaluate", str(synth_dataset), "--splits", "0.8", "--seeds", "1",
             "--epochs", "5"]
        )
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2

    def test_report_file_reloads_identically(self, tmp_path, synth_dataset, capsys):
        out = tmp_path / "report.json"
        code = main(
            ["evaluate", str(synth_dataset), "--splits", "0.8", "--seeds", "2",
             "--epochs", "5", "--out", str(out), "--format", "json-lines"]
        )
        assert code == 0
        stdout_reports = [
            json.loads(line) for line in capsys.readouterr().out.strip().splitlines()
        ]
        saved = json.loads(out.read_text())
        assert saved["reports"] == stdout_reports
        for report in saved["reports"]:
            confusion = report["confusion"]
            total = sum(confusion.values())
            assert abs(
                report["accuracy"] - (confusion["tp"] + confusion["tn"]) / total
            ) < 1e-12

    def test_curve_files_written(self, tmp_path, synth_dataset):
        curves = tmp_path / "curves"
        code = main(
            ["evaluate", str(synth_dataset), "--splits", "0.8", "--seeds", "1",
             "--epochs", "5", "--curves-dir", str(curves)]
        )
        assert code == 0
        files = list(curves.glob("loss-*.tsv"))
        assert len(files) == 1
        rows = [l for l in files[0].read_text().splitlines() if not l.startswith("#")]
        assert len(rows) == 5

    def test_byte_identical_rerun(self, tmp_path, synth_dataset):
        a, b = tmp_path / "ra.json", tmp_path / "rb.json"
        for out in (a, b):
            code = main(
                ["evaluate", str(synth_dataset), "--splits", "0.8", "--seeds", "3",
                 "--epochs", "5", "--out", str(out)]
            )
            assert code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_single_class_dataset_exits_2(self, tmp_path, synth_dataset, capsys):
        fingerprint, records = read_vector_records(synth_dataset)
        malicious_only = tmp_path / "mal.csv"
        with open(malicious_only, "w") as handle:
            handle.write("#vocabulary-fingerprint=%s\n" % fingerprint)
            for app_id, label, bits in records:
                if label == "malicious":
                    handle.write(
                        "%s,%s,%s\n" % (app_id, label, ",".join(map(str, bits)))
                    )
        code = main(
            ["evaluate", str(malicious_only), "--splits", "0.8", "--seeds", "1",
             "--epochs", "2"]
        )
        assert code == 2
        assert "cell failed" in capsys.readouterr().err


class TestUsageErrors:
    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag(self, capsys):
        assert main(["synth", "5", "5"]) == 1

    def test_bad_flag_value(self, capsys):
        assert main(["synth", "five", "5", "--out", "x.csv"]) == 1


class TestOutputDiscipline:
    def test_only_named_outputs_are_written(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        outdir = tmp_path / "outputs"
        outdir.mkdir()

        dataset = outdir / "d.csv"
        model = outdir / "m.json"
        curve = outdir / "m.loss.tsv"
        log = outdir / "extract.log"
        vectors = outdir / "v.csv"
        verdicts = outdir / "verdicts.tsv"
        apks = tmp_path / "apks"
        apks.mkdir()
        (apks / "one.apk").write_bytes(malware_apk())

        assert main(["synth", "40", "40", "--out", str(dataset)]) == 0
        assert main(["train", str(dataset), "--model-out", str(model),
                     "--curve-out", str(curve), "--epochs", "3"]) == 0
        assert main(["extract", str(apks), "--out", str(vectors),
                     "--log", str(log)]) == 0
        assert main(["classify", str(model), str(dataset),
                     "--out", str(verdicts)]) == 0

        assert list(workdir.iterdir()) == []
        produced = {p.name for p in outdir.iterdir()}
        assert produced == {
            "d.csv", "m.json", "m.loss.tsv", "extract.log", "v.csv",
            "verdicts.tsv",
        }
        first = verdicts.read_text().splitlines()[0]
        assert first.startswith("#run-manifest=")
