"""Smoke test for the sslnet_py extension: features, counts, metrics and a
tiny synth -> extract -> train -> eval round trip through the CLI entry point."""

import cmath
import json
import math
import sys
import tempfile
from pathlib import Path

import sslnet_py as s


def check_fft():
    x = [math.sin(0.3 * i) + 0.1 * i for i in range(16)]
    got = s.fft_real(x)
    assert len(got) == 9
    for k, c in enumerate(got):
        want = sum(v * cmath.exp(-2j * math.pi * k * t / 16) for t, v in enumerate(x))
        assert abs(c - want) < 1e-9, (k, c, want)


def check_features():
    ex = s.Extractor()
    tone = [0.4 * math.sin(2 * math.pi * 2000 * i / 22050) for i in range(22050)]
    mfcc = ex.mfcc(tone)
    assert len(mfcc) == 20
    stack = ex.stack(tone)
    assert (len(stack), len(stack[0]), len(stack[0][0])) == (3, 64, 64)
    try:
        s.Extractor(n_fft=1000)
    except s.ConfigError:
        pass
    else:
        raise AssertionError("n_fft=1000 accepted")


def check_counts_and_metrics():
    counts = [s.model_param_count(k, 20) for k in ("fixed", "shared", "sampling")]
    assert counts[0] < counts[1] < counts[2], counts
    assert s.fusion_param_count("shared", 128) == 2 * (128 * 128 + 128)
    m = s.metrics([0, 0, 1, 1], [0, 0, 0, 1], 2)
    assert m["accuracy"] == 0.75 and m["confusion"] == [[2, 0], [1, 1]]


def check_round_trip():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        assert s.synth(str(tmp / "data"), classes=3, clips_per_class=10, seed=1) == 30
        manifest = str(tmp / "data" / "manifest.csv")
        assert s.main(["extract", "--manifest", manifest, "--out", str(tmp / "feat")]) == 0
        cfg = tmp / "run.toml"
        cfg.write_text(
            f'[paths]\nmanifest = "{manifest}"\n'
            f'features = "{tmp / "feat" / "features.sslf"}"\n'
            f'embeddings = "{tmp / "feat" / "embeddings.ssle"}"\n'
        )
        run = str(tmp / "run")
        assert s.main(["train", "--config", str(cfg), "--epochs", "2", "--out", run]) == 0
        model = s.Model.load(str(tmp / "run" / "model.sslb"))
        assert model.vocabulary == ["class00", "class01", "class02"]
        m = model.evaluate(str(cfg), "test")
        assert m["params"] == model.param_count
        assert sum(map(sum, m["confusion"])) == len(model.predict(str(cfg), "test"))
        assert s.main(["eval", "--config", str(cfg), "--bundle", "missing.sslb", "--out", run]) == 2
        history = json.loads((tmp / "run" / "history.json").read_text())
        assert len(history["epochs"]) == 2


if __name__ == "__main__":
    check_fft()
    check_features()
    check_counts_and_metrics()
    check_round_trip()
    print("sslnet_py smoke test passed", file=sys.stderr)
