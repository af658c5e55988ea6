"""End-to-end runs of the command-line surface via main(argv)."""

import os

import numpy as np
import pytest

from sketchfield.cli import build_parser, main
from sketchfield.dataset import build_dataset, save_dataset
from sketchfield.grids import sketch_from_pgm, sketch_to_pgm
from sketchfield.session import load_session
from sketchfield.udf import udfg_from_bytes


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    records = build_dataset(seed=11, count=4, width=16, height=16)
    save_dataset(records, str(root), seed=11)
    return str(root)


@pytest.fixture(scope="module")
def generator_ckpt(tmp_path_factory, dataset_dir):
    out = str(tmp_path_factory.mktemp("cli_gen") / "gen.ckpt")
    code = run("train", "generator", "--dataset", dataset_dir, "--out", out,
               "--steps", "12", "--batch", "2", "--log-every", "5",
               "--diffusion-steps", "8")
    assert code == 0
    return out


def test_encode_decode_round_trip(tmp_path):
    from sketchfield.grids import SketchBitmap
    ink = np.zeros((12, 12), dtype=bool)
    ink[4, 3:9] = True
    ink[8, 5] = True
    src = tmp_path / "in.pgm"
    src.write_bytes(sketch_to_pgm(SketchBitmap.from_array(ink)))
    field_path = tmp_path / "f.udfg"
    out_path = tmp_path / "out.pgm"
    assert run("encode", "--input", str(src), "--output", str(field_path)) == 0
    assert run("decode", "--input", str(field_path),
               "--output", str(out_path)) == 0
    assert np.array_equal(sketch_from_pgm(out_path.read_bytes()).ink, ink)


def test_decode_msquares_method(tmp_path):
    ink = np.zeros((10, 10), dtype=bool)
    ink[2:8, 2:8] = True
    from sketchfield.grids import SketchBitmap
    src = tmp_path / "in.pgm"
    src.write_bytes(sketch_to_pgm(SketchBitmap.from_array(ink)))
    field_path = tmp_path / "f.udfg"
    out_path = tmp_path / "out.pgm"
    run("encode", "--input", str(src), "--output", str(field_path))
    assert run("decode", "--input", str(field_path), "--output", str(out_path),
               "--method", "msquares") == 0
    assert sketch_from_pgm(out_path.read_bytes()).ink.any()


def test_decode_learned_requires_checkpoint(tmp_path):
    from sketchfield.grids import SketchBitmap
    ink = np.zeros((8, 8), dtype=bool)
    ink[3, 3] = True
    src = tmp_path / "in.pgm"
    src.write_bytes(sketch_to_pgm(SketchBitmap.from_array(ink)))
    field_path = tmp_path / "f.udfg"
    run("encode", "--input", str(src), "--output", str(field_path))
    with pytest.raises(SystemExit):
        run("decode", "--input", str(field_path), "--output", "y",
            "--method", "learned")


def test_dataset_gen_writes_manifest(tmp_path, capsys):
    out = tmp_path / "ds"
    assert run("dataset", "gen", "--out", str(out), "--count", "3",
               "--seed", "5", "--width", "16", "--height", "16") == 0
    assert (out / "manifest.json").exists()
    assert len(list(out.glob("*.udfg"))) == 6  # rough + detailed per record
    assert "3 records" in capsys.readouterr().out


def test_train_generator_outputs(generator_ckpt):
    assert os.path.exists(generator_ckpt)
    assert os.path.exists(generator_ckpt + ".cfg")
    cfg_text = open(generator_ckpt + ".cfg").read()
    assert "diffusion_steps=8" in cfg_text.replace(" ", "")


def test_train_generator_curve_and_binary(tmp_path, dataset_dir):
    out = tmp_path / "gb.ckpt"
    curve = tmp_path / "curve.csv"
    assert run("train", "generator", "--dataset", dataset_dir,
               "--out", str(out), "--steps", "6", "--batch", "2",
               "--log-every", "3", "--diffusion-steps", "8",
               "--targets", "binary", "--curve", str(curve)) == 0
    lines = curve.read_text().strip().splitlines()
    assert lines[0] == "step,lr,loss"
    assert len(lines) >= 2


def test_train_mask_and_decoder(tmp_path, dataset_dir):
    mask_out = tmp_path / "mask.ckpt"
    dec_out = tmp_path / "dec.ckpt"
    assert run("train", "mask", "--dataset", dataset_dir,
               "--out", str(mask_out), "--steps", "6", "--batch", "2",
               "--log-every", "3") == 0
    assert run("train", "decoder", "--dataset", dataset_dir,
               "--out", str(dec_out), "--steps", "6", "--batch", "2",
               "--log-every", "3") == 0
    assert mask_out.exists() and dec_out.exists()


def test_session_flow_compose_eval(tmp_path, generator_ckpt):
    sdir = str(tmp_path / "s1")
    assert run("session", "new", "--dir", sdir, "--bbox", "2", "2", "13", "13",
               "--width", "16", "--height", "16") == 0
    # rough generation with an untrained net can decode blank; retry a few
    # seeds, the session stays in BoxSpecified until one lands
    for seed in range(6):
        assert run("session", "rough", "--dir", sdir,
                   "--checkpoint", generator_ckpt, "--seed", str(seed)) == 0
        if load_session(sdir).state == "RoughGenerated":
            break
    session = load_session(sdir)
    if session.state != "RoughGenerated":
        pytest.skip("toy checkpoint decoded blank under all retry seeds")

    edited = session.rough_sketch.ink.copy()
    edited[3, 3] = True
    from sketchfield.grids import SketchBitmap
    epath = tmp_path / "edit.pgm"
    epath.write_bytes(sketch_to_pgm(SketchBitmap.from_array(edited)))
    assert run("session", "edit", "--dir", sdir, "--input", str(epath)) == 0
    assert load_session(sdir).state == "RoughEdited"

    assert run("session", "mask", "--dir", sdir) == 0
    assert load_session(sdir).state == "MaskExtracted"

    for seed in range(6):
        assert run("session", "detail", "--dir", sdir,
                   "--checkpoint", generator_ckpt, "--seed", str(seed)) == 0
        if load_session(sdir).state == "DetailedGenerated":
            break
    if load_session(sdir).state != "DetailedGenerated":
        pytest.skip("toy checkpoint decoded blank at the detail stage")

    out = tmp_path / "composite.pgm"
    assert run("compose", sdir, f"{sdir}:2,1", "--out", str(out),
               "--width", "20", "--height", "20") == 0
    assert sketch_from_pgm(out.read_bytes()).ink.any()

    report = tmp_path / "report.csv"
    assert run("eval", sdir, "--out", str(report)) == 0
    lines = report.read_text().strip().splitlines()
    assert lines[0].startswith("session_id,")
    assert lines[-1].startswith("aggregate,")


def test_session_artifacts_are_valid_fields(tmp_path, generator_ckpt):
    sdir = str(tmp_path / "s2")
    run("session", "new", "--dir", sdir, "--bbox", "2", "2", "13", "13",
        "--width", "16", "--height", "16")
    for seed in range(6):
        run("session", "rough", "--dir", sdir, "--checkpoint", generator_ckpt,
            "--seed", str(seed))
        if os.path.exists(os.path.join(sdir, "rough.udfg")):
            break
    else:
        pytest.skip("no rough artifact produced by the toy checkpoint")
    field = udfg_from_bytes(open(os.path.join(sdir, "rough.udfg"), "rb").read())
    assert field.v.dtype == np.float32
    assert float(field.v.min()) >= 0.0


def test_missing_session_dir_is_reported(tmp_path, capsys):
    assert run("session", "edit", "--dir", str(tmp_path / "nope"),
               "--input", str(tmp_path / "nope.pgm")) == 2
    assert "error" in capsys.readouterr().err


def test_missing_checkpoint_is_io_error(tmp_path, capsys):
    sdir = str(tmp_path / "s3")
    run("session", "new", "--dir", sdir, "--bbox", "1", "1", "9", "9",
        "--width", "12", "--height", "12")
    assert run("session", "rough", "--dir", sdir,
               "--checkpoint", str(tmp_path / "missing.ckpt")) == 2
    assert "error [io]" in capsys.readouterr().err


def test_parser_covers_serve():
    args = build_parser().parse_args(
        ["serve", "--checkpoint", "g.ckpt", "--port", "9000"])
    assert args.port == 9000 and args.host == "127.0.0.1"
    assert args.width == 32 and args.fn.__name__ == "cmd_serve"
