"""Command-line entry point: ``amprnn <subcommand> [flags]``.

Subcommands follow the workflow order: gen-data, design-filter, train,
eval, spectrum, anchor, bench. Exit status is 0 on success, 1 on a domain
error (message on stderr) and 2 on a usage error.

Any subcommand accepts ``--config file.json``, an object whose keys are flag
names (``learning_rate`` or ``learning-rate``); explicit flags win over it.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import device, evaluation, filters, model, training
from .audio_io import DEFAULT_SAMPLE_RATE, half_second, read_wav, write_wav
from .errors import AmpRnnError

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _model_spec(text):
    label, sep, path = text.partition("=")
    if not sep or not path:
        raise argparse.ArgumentTypeError(f"expected LABEL=CHECKPOINT, got {text!r}")
    try:
        return filters.parse_label(label), path
    except AmpRnnError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="dataset directory with train/ and test/ (see gen-data)")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="JSON", help="JSON file of flag defaults; explicit flags override it")

    parser = argparse.ArgumentParser(
        prog="amprnn",
        description="Train and evaluate LSTM models of nonlinear audio devices with pre-emphasis ESR losses.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen-data", parents=[common], formatter_class=fmt,
                       help="render train/test WAV pairs from the synthetic device")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--kind", choices=device.KINDS, default="pluck_synth", help="excitation signal")
    p.add_argument("--train-seconds", type=float, default=60.0, help="training audio length")
    p.add_argument("--test-seconds", type=float, default=10.0, help="test audio length")
    p.add_argument("--sample-rate", type=int, default=DEFAULT_SAMPLE_RATE, help="Hz")
    p.add_argument("--seed", type=int, default=0, help="train seed; test uses seed+1")
    p.add_argument("--pre-gain", type=float, default=4.0, help="device drive before tanh")
    p.add_argument("--bias", type=float, default=0.1, help="device asymmetry bias before tanh")
    p.add_argument("--tone", type=_floats, default=(0.85, 0.15), help="device tone FIR, comma separated")
    p.add_argument("--output-gain", type=float, default=0.9, help="device output gain")
    p.add_argument("--format", choices=("float32", "pcm16"), default="float32", help="WAV sample format")

    p = sub.add_parser("design-filter", parents=[common], formatter_class=fmt,
                       help="emit pre-emphasis coefficients and magnitude response")
    p.add_argument("--type", choices=filters.LABELS, default="aw", help="filter label")
    p.add_argument("--taps", type=int, default=filters.AW_TAPS, help="A-weighting FIR length before the lowpass")
    p.add_argument("--sample-rate", type=int, default=DEFAULT_SAMPLE_RATE, help="Hz")
    p.add_argument("--out", default="-", help="coefficient JSON array path, '-' for stdout")
    p.add_argument("--response", help="also write freq_hz,gain_db CSV here")
    p.add_argument("--points", type=int, default=filters.GRID_POINTS, help="response grid points, 20 Hz to Nyquist")

    p = sub.add_parser("train", parents=[common], formatter_class=fmt,
                       help="train several seeds and keep the best on the test set")
    _add_data(p)
    p.add_argument("--out", required=True, help="checkpoint path for the best model")
    p.add_argument("--preemph", choices=filters.LABELS, default="none", help="loss pre-emphasis filter")
    p.add_argument("--hidden", type=int, default=32, help="LSTM hidden size (32 or 64 in the published runs)")
    p.add_argument("--residual", action="store_true", help="add the input to the output")
    p.add_argument("--epochs", type=int, default=750, help="passes over the training segments")
    p.add_argument("--batch-size", type=int, default=32, help="segments per mini-batch")
    p.add_argument("--learning-rate", "--lr", type=float, default=5e-4, dest="learning_rate",
                   help="Adam step size")
    p.add_argument("--segment-len", type=int, default=None, help="samples; default half a second")
    p.add_argument("--warmup", type=int, default=1000, help="forward-only samples per segment")
    p.add_argument("--truncation", type=int, default=2048, help="samples per parameter update")
    p.add_argument("--copies", type=int, default=5, help="models trained with seeds seed..seed+copies-1")
    p.add_argument("--seed", type=int, default=0, help="first copy's seed; also drives batch shuffling")
    p.add_argument("--parallel-copies", type=int, default=1, help="train this many copies concurrently")
    p.add_argument("--log-dir", help="per-copy epoch CSV logs; default <out stem>_logs next to --out")
    p.add_argument("--scores", help="write per-copy test losses as JSON here")

    p = sub.add_parser("eval", parents=[common], formatter_class=fmt,
                       help="cross-filter test loss matrix as CSV")
    _add_data(p)
    p.add_argument("--model", type=_model_spec, action="append", required=True, metavar="LABEL=CHECKPOINT",
                   help="trained model and the pre-emphasis it was trained with; repeatable")
    p.add_argument("--skip", type=int, default=evaluation.SKIP_SAMPLES, help="initial samples left out of the loss")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")

    p = sub.add_parser("spectrum", parents=[common], formatter_class=fmt,
                       help="test-set error spectrum as CSV")
    _add_data(p, required=False)
    p.add_argument("--checkpoint", help="model to run on the test input of --data")
    p.add_argument("--target", help="target WAV (instead of --data)")
    p.add_argument("--prediction", help="prediction WAV (instead of --checkpoint)")
    p.add_argument("--fft-size", type=int, default=4096, help="Welch frame length, a power of two")
    p.add_argument("--hop", type=int, default=2048, help="Welch frame advance")
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")

    p = sub.add_parser("anchor", parents=[common], formatter_class=fmt,
                       help="tanh-clipped low anchor for listening tests")
    p.add_argument("--input", required=True, help="input WAV")
    p.add_argument("--out", required=True, help="output WAV")
    p.add_argument("--drive", type=float, default=evaluation.ANCHOR_DRIVE, help="gain before tanh")
    p.add_argument("--reference", help="WAV whose peak level the anchor is matched to")
    p.add_argument("--format", choices=("float32", "pcm16"), default="float32", help="WAV sample format")

    p = sub.add_parser("bench", parents=[common], formatter_class=fmt,
                       help="time inference per second of audio")
    p.add_argument("--hidden", type=int, nargs="+", default=[32, 64], help="hidden sizes to time")
    p.add_argument("--checkpoint", help="time this model instead of random ones")
    p.add_argument("--seconds", type=float, default=1.0, help="audio length per run")
    p.add_argument("--repeats", type=int, default=5, help="runs per model; the median is reported")
    p.add_argument("--sample-rate", type=int, default=DEFAULT_SAMPLE_RATE, help="Hz")
    p.add_argument("--seed", type=int, default=0, help="seed for the random models and the noise input")
    return parser, sub


def _config_path(argv):
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def _install_config(sub, command, path):
    """Make the JSON object at ``path`` the defaults of one subcommand."""
    subparser = sub.choices[command]
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        subparser.error(f"cannot read --config {path}: {exc}")
    if not isinstance(cfg, dict):
        subparser.error("--config must hold a JSON object")
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            subparser.error(f"unknown key {key!r} in --config")
        actions[dest].required = False
        defaults[dest] = value
    subparser.set_defaults(**defaults)


def _write_text(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _cmd_gen_data(args):
    dev = device.DeviceConfig(args.pre_gain, args.bias, args.tone, args.output_gain)
    device.generate_dataset(args.out, dev, args.kind, args.train_seconds, args.test_seconds, args.seed,
                            args.sample_rate, args.format)
    print(f"wrote {args.out}/train, {args.out}/test and manifest.json")


def _cmd_design_filter(args):
    if args.type == "aw":
        filt = filters.make_lowpassed_a_weighting(args.taps, args.sample_rate)
    else:
        filt = filters.make_filter(args.type)
    _write_text(json.dumps(filt.coeffs.tolist()) + "\n", args.out)
    if args.response:
        freqs = np.geomspace(filters.GRID_LOW_HZ, args.sample_rate / 2.0, args.points)
        grid = filters.magnitude_response(filt, freqs, args.sample_rate)
        rows = ["freq_hz,gain_db"] + [f"{f:.6g},{g:.4f}" for f, g in zip(grid.freqs_hz, grid.gains_db)]
        Path(args.response).write_text("\n".join(rows) + "\n")


def _train_config(args, sample_rate):
    return training.TrainingConfig(
        segment_len=args.segment_len or half_second(sample_rate),
        warmup_len=args.warmup,
        truncation_len=args.truncation,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        preemph=args.preemph,
        seed=args.seed,
        copies=args.copies,
        hidden_size=args.hidden,
        residual=args.residual,
        sample_rate_hz=sample_rate,
        parallel_copies=args.parallel_copies,
    )


def _cmd_train(args):
    data = training.load_dataset(args.data)
    config = _train_config(args, data.sample_rate_hz)
    out = Path(args.out)
    log_dir = Path(args.log_dir) if args.log_dir else out.parent / f"{out.stem}_logs"
    log_dir.mkdir(parents=True, exist_ok=True)
    best, scores = training.train_multi_seed(data, config, log_dir)
    model.save_checkpoint(best, out)
    for i, score in enumerate(scores):
        print(f"copy {i} seed {config.seed + i}: test loss ({config.preemph}) {score:.6g}")
    print(f"best: copy {int(np.argmin(scores))} -> {out}")
    if args.scores:
        Path(args.scores).write_text(json.dumps({"preemph": config.preemph, "scores": scores}, indent=2) + "\n")


def _cmd_eval(args):
    data = training.load_dataset(args.data)
    models = {}
    for label, path in args.model:
        if label in models:
            raise ValueError(f"two models given for label {label!r}")
        models[label] = model.load_checkpoint(path)
    matrix = evaluation.cross_loss_matrix(models, data.test_input, data.test_target, args.skip)
    _write_text(matrix.to_csv(), args.out)


def _cmd_spectrum(args):
    if args.target:
        target = read_wav(args.target)
    elif args.data:
        data = training.load_dataset(args.data)
        target = data.test_target
    else:
        raise ValueError("give --data or --target")
    if args.prediction:
        prediction = read_wav(args.prediction)
    elif args.checkpoint and args.data:
        prediction, _ = model.forward_sequence(model.load_checkpoint(args.checkpoint), data.test_input)
    else:
        raise ValueError("give --prediction, or --checkpoint together with --data")
    spec = evaluation.error_spectrum(target, prediction, args.fft_size, args.hop, target.sample_rate_hz)
    _write_text(spec.to_csv(), args.out)


def _cmd_anchor(args):
    x = read_wav(args.input)
    ref = read_wav(args.reference) if args.reference else None
    write_wav(evaluation.tanh_anchor(x, args.drive, ref), args.out, args.format)


def _cmd_bench(args):
    if args.checkpoint:
        models = [model.load_checkpoint(args.checkpoint)]
    else:
        models = [model.init_params(h, args.seed) for h in args.hidden]
    print("hidden_size,process_time_s,real_time_factor,published_s_per_s")
    for params in models:
        runs = [evaluation.benchmark_inference(params, args.seconds, args.sample_rate, args.seed)
                for _ in range(args.repeats)]
        t = float(np.median([r["process_time_s"] for r in runs]))
        published = evaluation.PUBLISHED_SECONDS_PER_SECOND.get(params.hidden_size, "")
        print(f"{params.hidden_size},{t:.6f},{t / args.seconds:.6f},{published}")


COMMANDS = {
    "gen-data": _cmd_gen_data,
    "design-filter": _cmd_design_filter,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "spectrum": _cmd_spectrum,
    "anchor": _cmd_anchor,
    "bench": _cmd_bench,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        config = _config_path(argv)
        if config is not None and argv[0] in sub.choices:
            _install_config(sub, argv[0], config)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        COMMANDS[args.command](args)
    except (AmpRnnError, OSError, ValueError) as exc:
        print(f"amprnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
