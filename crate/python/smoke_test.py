#!/usr/bin/env python3
"""Build the uvector_py extension module and drive it end to end:
synthesis -> VAD -> features -> embedding -> clustering metrics."""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_module(workdir: Path) -> None:
    subprocess.run(
        ["cargo", "build", "-p", "uvector-py", "--release", "--features", "extension-module"],
        cwd=REPO,
        check=True,
    )
    shutil.copy(REPO / "target/release/libuvector_py.so", workdir / "uvector_py.so")


def main() -> None:
    workdir = Path(tempfile.mkdtemp(prefix="uvector_py_"))
    build_module(workdir)
    sys.path.insert(0, str(workdir))
    import uvector_py as uv

    assert uv.SAMPLE_RATE == 16000

    # Synthesis produces real audio; VAD cuts it into 1 s segments.
    audio = uv.synth_utterance(3, 0, 7, 6.0, 1)
    assert len(audio) == 6 * uv.SAMPLE_RATE
    segments = uv.vad_segments(audio, 16.0, 1.0)
    assert segments, "no voiced segments found"
    assert all(abs(dur - 1.0) < 1e-9 for _, dur in segments)

    # Features have the advertised shape.
    frame = audio[: uv.SAMPLE_RATE // 5]
    fmap = uv.featurize(frame)
    n_mels, n_steps = uv.feature_shape(len(frame))
    assert (len(fmap), len(fmap[0])) == (n_mels, n_steps) == (100, 91)

    # Clamp and blend behave as documented.
    assert uv.thresholded_relu(1.0, 1.0) == 1.0
    assert uv.thresholded_relu(-0.5, 1.0) == 0.0
    noise = uv.gen_noise("pink", 0.5, 3)[: len(frame)]
    assert uv.augment(frame, noise, 0.0) == frame
    assert uv.augment(frame, noise, 1.0) == noise

    # Embedding distances respect the clamp; identical inputs sit at zero.
    emb = uv.Embedder(n_mels, n_steps, seed=0)
    assert emb.embed_dim == 12 and emb.input_shape == (100, 91)
    e = emb.embed(fmap)
    assert len(e) == 12 and all(math.isfinite(v) for v in e)
    assert emb.distance(fmap, fmap, 1.0) == 0.0
    other = uv.featurize(audio[len(frame) : 2 * len(frame)])
    assert 0.0 <= emb.distance(fmap, other, 1.0) <= 1.0

    # Clustering metrics: planted clusters are recovered exactly.
    data = [[10.0 + 0.1 * i, 0.0] for i in range(5)] + [[0.0, 5.0 + 0.1 * i] for i in range(5)]
    pred = uv.kmeans(data, 2, seed=0)
    truth = [0] * 5 + [1] * 5
    acc, nmi, ari = uv.cluster_scores(pred, truth)
    assert (acc, nmi, ari) == (1.0, 1.0, 1.0)

    # The default config round-trips through the Rust TOML schema.
    assert "batch_size = 128" in uv.default_config_toml()

    print("PASS")


if __name__ == "__main__":
    main()
