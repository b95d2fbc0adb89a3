"""Shared, expensive fixtures: trained models are built once per session."""

import pytest

from gamma_desk.data import synth_detection_set
from gamma_desk.detection import AttentiveDetector

DETECTOR_ITERATIONS = 2000
DETECTOR_BOUNDARY = 1600

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def detection_split():
    return synth_detection_set(0, 400, tag="train"), synth_detection_set(0, 100, tag="test")


@pytest.fixture(scope="session")
def trained_detector(detection_split):
    """SEA detector on 400 clean synthetic scenes (seed 0)."""
    train, _ = detection_split
    return AttentiveDetector(iterations=DETECTOR_ITERATIONS, lr_boundary=DETECTOR_BOUNDARY,
                             random_state=0).fit(train)


SMOKE_SETTINGS = [
    "data.size=32", "data.n_x=12", "data.n_y=12", "data.n_train=16", "data.n_test=8",
    "cyclegan.constant_epochs=1", "cyclegan.decay_epochs=1", "cyclegan.steps_per_epoch=10",
    "cyclegan.fid_every=1", "cyclegan.probe_size=8",
    "detector.iterations=30", "detector.lr_boundary=20", "attn.count=2",
]


def run_pipeline(root, seed=0):
    """Every subcommand once, chained the way a user would run them; returns {step: out dir}."""
    from gamma_desk.cli import main

    sets = [a for s in SMOKE_SETTINGS for a in ("--set", s)]
    common = ["--seed", str(seed), *sets]
    d = {name: root / name for name in ("data", "gan", "aug", "mix", "det", "eval", "fid", "attn")}
    steps = [
        ("data", ["synth-data"]),
        ("gan", ["train-cyclegan", "--x", d["data"] / "domain_X", "--y", d["data"] / "domain_Y"]),
        ("aug", ["translate", "--model", d["gan"] / "model", "--data", d["data"] / "det_source"]),
        ("mix", ["mix", "--existing", d["data"] / "det_train", "--augmented", d["aug"] / "data",
                 "--eval-data", d["data"] / "det_test"]),
        ("det", ["train-detector", "--data", d["mix"] / "data", "--eval-data", d["data"] / "det_test"]),
        ("eval", ["eval", "--model", d["det"] / "model", "--data", d["data"] / "det_test"]),
        ("fid", ["fid", "--data", d["aug"] / "data", "--reference", d["data"] / "domain_Y"]),
        ("attn", ["attn-maps", "--model", d["det"] / "model", "--data", d["data"] / "det_test"]),
    ]
    for name, argv in steps:
        code = main([str(a) for a in argv] + common + ["--out", str(d[name])])
        assert code == 0, f"{name} exited {code}: {(d[name] / 'FAILED').read_text() if (d[name] / 'FAILED').exists() else ''}"
    return d
