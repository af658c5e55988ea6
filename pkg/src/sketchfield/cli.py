"""Command-line front end: encode/decode, dataset generation, training,
session stepping, compositing, evaluation and the HTTP server."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import nn
from .dataset import (build_dataset, load_dataset, save_dataset,
                      to_train_samples)
from .decoder import (decode_learned_binary, decode_msquares, load_decoder,
                      train_decoder)
from .diffusion import (GeneratorNet, TrainConfig, loss_curve_to_csv,
                        train, train_config_from_text, train_config_to_text)
from .errors import SketchFieldError
from .grids import BBox, sketch_from_pgm, sketch_to_pgm
from .masking import (MaskLossConfig, load_mask_head, mask_loss_config_to_text,
                      train_mask_head)
from .session import (CompositionCanvas, CompositionLayer, compose,
                      create_session, evaluate, evaluation_to_csv,
                      extract_mask, generate_detailed, generate_rough,
                      load_session, save_session, submit_edit)
from .udf import (decode_level, decode_threshold, encode_sketch,
                  udfg_from_bytes, udfg_to_bytes)


def _read(path: str) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _write(path: str, data: bytes):
    with open(path, "wb") as fh:
        fh.write(data)
    print(f"wrote {path}")


def _write_text(path: str, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote {path}")


def _load_generator(path: str) -> GeneratorNet:
    net = GeneratorNet(seed=0)
    nn.load_checkpoint(net.params(), path)
    return net


def _schedule_for(args) -> tuple:
    """Schedule from the config written beside the generator checkpoint."""
    cfg_path = args.config or args.checkpoint + ".cfg"
    if os.path.exists(cfg_path):
        with open(cfg_path, encoding="utf-8") as fh:
            cfg = train_config_from_text(fh.read())
    else:
        cfg = TrainConfig()
    return cfg.make_schedule(), cfg


# ---------------------------------------------------------------------------
# handlers
# ---------------------------------------------------------------------------

def cmd_encode(args):
    sketch = sketch_from_pgm(_read(args.input))
    field = encode_sketch(sketch, args.time_constant)
    _write(args.output, udfg_to_bytes(field))


def cmd_decode(args):
    field = udfg_from_bytes(_read(args.input))
    if args.method == "threshold":
        sketch = decode_threshold(field,
                                  decode_level(field.time_constant,
                                               args.distance))
    elif args.method == "msquares":
        sketch = decode_msquares(field)
    else:
        if not args.checkpoint:
            raise SystemExit("decode --method learned needs --checkpoint")
        net = load_decoder(_read(args.checkpoint))
        sketch = decode_learned_binary(net, field)
    _write(args.output, sketch_to_pgm(sketch))


def cmd_dataset_gen(args):
    records = build_dataset(seed=args.seed, count=args.count,
                            width=args.width, height=args.height,
                            min_area_fraction=args.min_area_fraction)
    save_dataset(records, args.out, seed=args.seed,
                 min_area_fraction=args.min_area_fraction)
    print(f"wrote {len(records)} records to {args.out}")


def _train_cfg(args) -> TrainConfig:
    return TrainConfig(total_steps=args.steps, batch_size=args.batch,
                       initial_lr=args.lr, seed=args.seed,
                       log_every=args.log_every,
                       diffusion_steps=args.diffusion_steps,
                       beta_start=args.beta_start, beta_end=args.beta_end)


def cmd_train_generator(args):
    _, records = load_dataset(args.dataset)
    samples = to_train_samples(records, binary_targets=args.targets == "binary")
    cfg = _train_cfg(args)
    net = GeneratorNet(seed=cfg.seed)
    blob, curve = train(net, samples, cfg.make_schedule(), cfg)
    _write(args.out, blob)
    _write_text(args.out + ".cfg", train_config_to_text(cfg))
    if args.curve:
        _write_text(args.curve, loss_curve_to_csv(curve))
    print(f"final loss {curve[-1][2]:.5f} after {curve[-1][0]} steps")


def cmd_train_mask(args):
    _, records = load_dataset(args.dataset)
    triples = [(r.rough_udf, r.bbox, r.mask) for r in records]
    cfg = _train_cfg(args)
    loss_cfg = MaskLossConfig(lambda_focal=args.lambda_focal,
                              lambda_dice=args.lambda_dice,
                              focal_alpha=args.focal_alpha,
                              focal_gamma=args.focal_gamma)
    blob, curve, val_rows = train_mask_head(triples, loss_cfg, cfg)
    _write(args.out, blob)
    _write_text(args.out + ".cfg", train_config_to_text(cfg)
                + mask_loss_config_to_text(loss_cfg))
    if args.curve:
        _write_text(args.curve, loss_curve_to_csv(curve))
    if val_rows:
        print(f"validation IoU {val_rows[-1][1]:.4f}")


def cmd_train_decoder(args):
    _, records = load_dataset(args.dataset)
    pairs = [(r.detailed_udf, r.detailed) for r in records]
    pairs += [(r.rough_udf, r.rough) for r in records]
    cfg = _train_cfg(args)
    blob, curve, val_rows = train_decoder(pairs, cfg)
    _write(args.out, blob)
    _write_text(args.out + ".cfg", train_config_to_text(cfg))
    if args.curve:
        _write_text(args.curve, loss_curve_to_csv(curve))
    if val_rows:
        print(f"validation chamfer {val_rows[-1][1]:.4f}")


def cmd_session_new(args):
    session = create_session(BBox(*args.bbox), args.class_tag,
                             args.width, args.height)
    save_session(session, args.dir)
    print(f"session {session.session_id} ({session.state}) in {args.dir}")


def _session_step(args, fn):
    session = load_session(args.dir)
    fn(session)
    save_session(session, args.dir)
    flag = " (blank decode, retry)" if session.blank_generation else ""
    print(f"session {session.session_id} now {session.state}{flag}")


def cmd_session_rough(args):
    net = _load_generator(args.checkpoint)
    schedule, _ = _schedule_for(args)
    rng = np.random.default_rng(args.seed)
    decoder_net = load_decoder(_read(args.decoder)) if args.decoder else None
    _session_step(args, lambda s: generate_rough(s, net, schedule, rng,
                                                 decoder_net=decoder_net))


def cmd_session_edit(args):
    edited = sketch_from_pgm(_read(args.input))
    _session_step(args, lambda s: submit_edit(s, edited))


def cmd_session_mask(args):
    mask_net = load_mask_head(_read(args.mask_head)) if args.mask_head else None
    _session_step(args, lambda s: extract_mask(s, mask_net=mask_net))


def cmd_session_detail(args):
    net = _load_generator(args.checkpoint)
    schedule, _ = _schedule_for(args)
    rng = np.random.default_rng(args.seed)
    decoder_net = load_decoder(_read(args.decoder)) if args.decoder else None
    _session_step(args, lambda s: generate_detailed(s, net, schedule, rng,
                                                    decoder_net=decoder_net))


def _parse_layer(spec: str) -> tuple:
    if ":" in spec:
        path, _, off = spec.rpartition(":")
        dx, dy = (int(v) for v in off.split(","))
    else:
        path, dx, dy = spec, 0, 0
    return path, dx, dy


def cmd_compose(args):
    layers = []
    for spec in args.layers:
        path, dx, dy = _parse_layer(spec)
        session = load_session(path)
        layers.append(CompositionLayer(session.detailed_sketch,
                                       session.instance_mask, (dx, dy)))
    out = compose(CompositionCanvas(args.width, args.height, layers))
    _write(args.out, sketch_to_pgm(out))


def cmd_eval(args):
    sessions = [load_session(path) for path in args.sessions]
    references = None
    if args.dataset:
        _, records = load_dataset(args.dataset)
        references = [r.detailed for r in records]
    rows = evaluate(sessions, references=references)
    text = evaluation_to_csv(rows)
    if args.out:
        _write_text(args.out, text)
    else:
        print(text, end="")


def cmd_serve(args):
    import uvicorn

    from .service import PipelineService, create_app
    net = _load_generator(args.checkpoint)
    schedule, cfg = _schedule_for(args)
    decoder_net = load_decoder(_read(args.decoder)) if args.decoder else None
    mask_net = load_mask_head(_read(args.mask_head)) if args.mask_head else None
    service = PipelineService(net, schedule, width=args.width,
                              height=args.height, seed=args.seed,
                              decoder_net=decoder_net, mask_net=mask_net)
    static = args.static_dir if args.static_dir and os.path.isdir(args.static_dir) else None
    app = create_app(service, static_dir=static)
    print(f"serving {args.width}x{args.height} canvas on "
          f"{args.host}:{args.port} (schedule {cfg.diffusion_steps} steps)")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser, steps: int, lr: float):
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=steps)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--diffusion-steps", type=int, default=200)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=2e-2)
    p.add_argument("--curve", help="write the loss curve CSV here")


def _add_sample_flags(p: argparse.ArgumentParser):
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", help="training config text "
                   "(default: <checkpoint>.cfg)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoder", help="learned decoder checkpoint (optional)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchfield")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="sketch P5 -> field")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--time-constant", type=float)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="field -> sketch P5")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--method", choices=("threshold", "msquares", "learned"),
                   default="threshold")
    p.add_argument("--distance", type=float, default=0.5,
                   help="iso distance in pixels for the threshold path")
    p.add_argument("--checkpoint", help="decoder checkpoint for --method learned")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("dataset", help="dataset tools")
    dsub = p.add_subparsers(dest="dataset_command", required=True)
    g = dsub.add_parser("gen", help="generate a procedural dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--min-area-fraction", type=float, default=0.02)
    g.set_defaults(fn=cmd_dataset_gen)

    p = sub.add_parser("train", help="training loops")
    tsub = p.add_subparsers(dest="train_command", required=True)
    t = tsub.add_parser("generator")
    _add_train_flags(t, steps=6000, lr=2e-4)
    t.add_argument("--targets", choices=("udf", "binary"), default="udf",
                   help="binary trains on two-level fields (ablation baseline)")
    t.set_defaults(fn=cmd_train_generator)
    t = tsub.add_parser("mask")
    _add_train_flags(t, steps=600, lr=1e-3)
    t.add_argument("--lambda-focal", type=float, default=20.0)
    t.add_argument("--lambda-dice", type=float, default=1.0)
    t.add_argument("--focal-alpha", type=float, default=0.25)
    t.add_argument("--focal-gamma", type=float, default=2.0)
    t.set_defaults(fn=cmd_train_mask)
    t = tsub.add_parser("decoder")
    _add_train_flags(t, steps=1500, lr=1e-3)
    t.set_defaults(fn=cmd_train_decoder)

    p = sub.add_parser("session", help="session lifecycle on a directory")
    ssub = p.add_subparsers(dest="session_command", required=True)
    s = ssub.add_parser("new")
    s.add_argument("--dir", required=True)
    s.add_argument("--bbox", type=int, nargs=4, required=True,
                   metavar=("X0", "Y0", "X1", "Y1"))
    s.add_argument("--class-tag", type=int, default=0)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--height", type=int, default=32)
    s.set_defaults(fn=cmd_session_new)
    s = ssub.add_parser("rough")
    s.add_argument("--dir", required=True)
    _add_sample_flags(s)
    s.set_defaults(fn=cmd_session_rough)
    s = ssub.add_parser("edit")
    s.add_argument("--dir", required=True)
    s.add_argument("--input", required=True, help="edited sketch as P5")
    s.set_defaults(fn=cmd_session_edit)
    s = ssub.add_parser("mask")
    s.add_argument("--dir", required=True)
    s.add_argument("--mask-head", help="learned extractor checkpoint (optional)")
    s.set_defaults(fn=cmd_session_mask)
    s = ssub.add_parser("detail")
    s.add_argument("--dir", required=True)
    _add_sample_flags(s)
    s.set_defaults(fn=cmd_session_detail)

    p = sub.add_parser("compose", help="layer session sketches onto one canvas")
    p.add_argument("layers", nargs="+",
                   help="session dirs, each optionally DIR:dx,dy")
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.set_defaults(fn=cmd_compose)

    p = sub.add_parser("eval", help="metric report over finished sessions")
    p.add_argument("sessions", nargs="+", help="session directories")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--dataset", help="reference dataset for nearest-chamfer")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP session API")
    _add_sample_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8600)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--mask-head")
    p.add_argument("--static-dir", help="serve this directory at /ui")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except SketchFieldError as exc:
        print(f"error [{getattr(exc, 'code', 'error')}]: {exc}",
              file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
