from __future__ import annotations

import numpy as np
import pytest

from knitc.cli import run
from knitc.instructions import InstructionMap, mirror_to_back, read_map, write_map
from knitc.machine import parse_program, validate
from knitc.render import read_pgm

BROKEN = ["K K K K", "K XR+ K K", "K K K K"]


@pytest.fixture
def valid_kp(tmp_path):
    p = tmp_path / "valid.kp"
    write_map(p, InstructionMap.from_rows(["K K K K", "K XR+ XL- K", "K P P K"]))
    return p


@pytest.fixture
def broken_kp(tmp_path):
    p = tmp_path / "broken.kp"
    write_map(p, InstructionMap.from_rows(BROKEN))
    return p


def test_compile_valid(valid_kp, tmp_path):
    out = tmp_path / "out.kops"
    assert run(["compile", str(valid_kp), "-o", str(out)]) == 0
    assert parse_program(out.read_text())


def test_compile_broken_reports(broken_kp, tmp_path, capsys):
    assert run(["compile", str(broken_kp), "-o", str(tmp_path / "x.kops")]) == 1
    assert "unpaired" in capsys.readouterr().err.lower()
    assert not (tmp_path / "x.kops").exists()


def test_compile_repair(broken_kp, tmp_path):
    out = tmp_path / "out.kops"
    assert run(["compile", str(broken_kp), "--repair", "-o", str(out)]) == 0
    assert out.exists()


def test_validate_and_repair(broken_kp, tmp_path):
    assert run(["validate", str(broken_kp)]) == 1
    fixed = tmp_path / "fixed.kp"
    assert run(["repair", str(broken_kp), "-o", str(fixed)]) == 0
    assert validate(read_map(fixed)).ok
    assert run(["validate", str(fixed)]) == 0


def test_simulate_prints_state(valid_kp, tmp_path, capsys):
    out = tmp_path / "out.kops"
    run(["compile", str(valid_kp), "-o", str(out)])
    capsys.readouterr()
    assert run(["simulate", str(out), "--cast-on", "4"]) == 0
    assert capsys.readouterr().out.startswith("racking 0")


def test_mirror_and_render(valid_kp, tmp_path):
    mirrored = tmp_path / "m.kp"
    assert run(["mirror", str(valid_kp), "-o", str(mirrored)]) == 0
    assert read_map(mirrored) == mirror_to_back(read_map(valid_kp))
    img = tmp_path / "r.pgm"
    assert run(["render", str(valid_kp), "-o", str(img), "--tile", "4"]) == 0
    assert read_pgm(img).shape == (12, 16)


def test_usage_errors(tmp_path):
    assert run(["compile", str(tmp_path / "missing.kp")]) == 2
    assert run(["no-such-command"]) == 2
    assert run(["epsilon", "--m", "10"]) == 2


def test_domain_errors(tmp_path):
    bad = tmp_path / "bad.kp"
    bad.write_text("not a map\n")
    assert run(["validate", str(bad)]) == 1
    assert run(["epsilon", "--m", "10", "--alpha", "0.5", "--beta", "1", "--delta", "0.05"]) == 1


def test_epsilon_and_bound_sim(tmp_path, capsys):
    assert run(["epsilon", "--m", "1000", "--alpha", "0.5", "--beta", "0.5", "--delta", "0.05"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.04295, abs=1e-5)
    out = tmp_path / "b.tsv"
    assert run(["bound-sim", "--trials", "10", "--m", "100", "--alpha", "0,0.5", "--beta", "0.5",
                "--delta", "0.05", "-o", str(out)]) == 0
    assert out.read_text().splitlines()[1].startswith("alpha\tgap\tboundRHS\tepsilon")


def test_pipeline_gen_corpus_train_infer_eval(tmp_path, capsys):
    gen = tmp_path / "gen"
    assert run(["gen", "--count", "3", "--seed", "4", "-o", str(gen)]) == 0
    assert sorted(p.name for p in gen.iterdir()) == ["00000.kp", "00001.kp", "00002.kp"]
    corpus = tmp_path / "corpus"
    assert run(["corpus", "--synthetic", "2", "--pseudo-real", "7", "--seed", "1", "-o", str(corpus)]) == 0
    weights = tmp_path / "w.knw"
    assert run(["train", "--corpus", str(corpus), "--iters", "2", "--alpha", "0.5", "-o", str(weights)]) == 0
    test_pgm = next((corpus / "test").glob("*.pgm"))
    pred = tmp_path / "pred"
    pred.mkdir()
    assert run(["infer", "--weights", str(weights), "--image", str(test_pgm),
                "-o", str(pred / test_pgm.with_suffix(".kp").name)]) == 0
    gt = tmp_path / "gt"
    gt.mkdir()
    (gt / test_pgm.with_suffix(".kp").name).write_text(test_pgm.with_suffix(".kp").read_text())
    report = tmp_path / "report.tsv"
    capsys.readouterr()
    assert run(["eval", "--pred", str(pred), "--gt", str(gt), "--report", str(report)]) == 0
    assert "FULL %" in capsys.readouterr().out and report.exists()
    big = tmp_path / "big.pgm"
    write_map(tmp_path / "big.kp", InstructionMap(np.zeros((40, 40), dtype=int)))
    run(["render", str(tmp_path / "big.kp"), "-o", str(big)])
    assert run(["scale-sweep", "--weights", str(weights), "--image", str(big), "--scales", "4,8"]) == 0
    assert run(["scale-sweep", "--weights", str(weights), "--image", str(big), "--scales", "20"]) == 1
