"""Command-line interface: ``flickerfusion <subcommand> [options]``.

Options resolve as command-line flags > ``--config`` JSON file > built-in
defaults. Every run prints the model preset and a digest of the resolved
configuration to stderr; when an output path is given the resolved
configuration is also written next to it as ``<output>.config.json``.

Exit status is 0 on success, 2 for usage errors and 1 for domain or
runtime errors. ``--error-json`` prints errors to stderr as a JSON object.

The default model is the ``full`` preset, or the parameter JSON named by
the ``CFF_PRESET_PATH`` environment variable when it is set.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._validation import DomainError
from .bandwidth import (
    AnalysisConfig,
    filter_video,
    gain_sweep,
    read_raw_video,
    retained_count,
    sweep_csv_text,
    write_raw_video,
)
from .fitting import (
    ConvergenceError,
    FitConfig,
    fit_cff,
    fit_luminance,
    read_thresholds,
    write_fit_report,
)
from .model import (
    PRESETS,
    PUBLISHED_ILLUMINANCE,
    CffModel,
    acuity_limit,
    effective_illuminance,
    load_model,
    psi,
    psi_hat,
    save_model,
)
from .quality import load_descriptors, predict_visibility, save_verdict
from .stimulus import (
    DisplayGeometry,
    GaborStimulus,
    load_stimuli,
    render_sequence,
    save_stimuli,
    stimulus_catalog,
    write_pgm,
)

PRESET_ENV = "CFF_PRESET_PATH"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _fmt(v):
    return format(float(v), ".10g")


# Per-subcommand defaults. Every key here can come from the config file.
DEFAULTS = {
    "eval": {"e": [0.0], "fs": [2.0], "luminance": None},
    "fit": {"input": None, "mode": "relaxed", "initialization": "table3", "n_starts": 8,
            "max_iter": 2000, "tol": 1e-9, "under_weight": 10.0, "over_weight": 0.0,
            "zero_weight": 10.0, "acuity_weight": 5.0, "extent_limit": None,
            "report": None, "luminance_fit": False},
    "acuity": {"e": [float(e) for e in range(0, 61, 2)]},
    "stimulus": {"input": None, "index": None, "ft": 10.0, "theta": 0.0,
                 "temporal_phase": 0.0, "framerate": 360.0, "frames": None,
                 "resolution": [1280, 720], "fov": [80.0, 87.0], "gaze": [0.0, 0.0],
                 "sixteen_bit": False},
    "predict": {"input": None},
    "bandwidth": {"ppd": 60.0, "fov_h": 165.0, "fov_v": 135.0, "framerate": 200.0,
                  "window": 128, "gaze": [0.0, 0.0], "luminance": 380.0,
                  "mode": "spatioTemporal", "counting": "analytic", "fs_samples": 5,
                  "per_band_csv": None, "video": None, "video_out": None},
    "sweep-fig3": {"e_step": 1.0, "e_max": 60.0, "fs_count": 25, "fs_min": 0.0055,
                   "fs_max": 4.0, "presets": ["conservative", "relaxed", "full"]},
    "sweep-fig4": {"e_step": 2.0, "e_max": 60.0,
                   "fs": [0.0055, 0.011, 0.041, 0.154, 0.571, 2.0],
                   "luminances": sorted(PUBLISHED_ILLUMINANCE)},
    "sweep-fig6": {"ppd": [60.0], "framerate": 200.0, "window": 128,
                   "fov": [10.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0, 140.0, 165.0],
                   "modes": ["spatialOnly", "spatioTemporal"], "luminance": 380.0,
                   "fs_samples": 5},
}
COMMON = {"output": None, "preset": None, "model": None, "seed": 0, "threads": 1}


def _common(p):
    s = argparse.SUPPRESS
    p.add_argument("-o", "--output", default=s, help="output path (stdout if omitted)")
    p.add_argument("--preset", choices=sorted(PRESETS), default=s,
                   help="built-in parameter set")
    p.add_argument("--model", default=s, help="model parameter JSON (overrides --preset)")
    p.add_argument("--config", default=None, help="JSON file with option defaults")
    p.add_argument("--seed", type=int, default=s)
    p.add_argument("--threads", type=int, default=s)
    p.add_argument("--error-json", action="store_true", help="report errors as JSON")


def build_parser():
    s = argparse.SUPPRESS
    parser = _Parser(prog="flickerfusion", description="Eccentricity-dependent CFF model tools")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("eval", help="evaluate the CFF model")
    _common(p)
    p.add_argument("--e", type=float, nargs="+", default=s, help="eccentricities (deg)")
    p.add_argument("--fs", type=float, nargs="+", default=s, help="spatial frequencies (cpd)")
    p.add_argument("--luminance", type=float, default=s, help="display luminance (cd/m2)")

    p = sub.add_parser("fit", help="fit model parameters to a threshold CSV")
    _common(p)
    p.add_argument("--input", default=s)
    p.add_argument("--mode", choices=["conservative", "relaxed", "full"], default=s)
    p.add_argument("--initialization", choices=["table3", "multistart"], default=s)
    p.add_argument("--n-starts", type=int, default=s)
    p.add_argument("--max-iter", type=int, default=s)
    p.add_argument("--tol", type=float, default=s)
    for w in ("under", "over", "zero", "acuity"):
        p.add_argument(f"--{w}-weight", type=float, default=s)
    p.add_argument("--extent-limit", type=float, default=s)
    p.add_argument("--report", default=s, help="fit report JSON path")
    p.add_argument("--luminance-fit", action="store_true", default=s,
                   help="also fit the luminance slope coefficients")

    p = sub.add_parser("acuity", help="tabulate the acuity limit")
    _common(p)
    p.add_argument("--e", type=float, nargs="+", default=s)

    p = sub.add_parser("stimulus", help="render Gabor stimulus frames as PGM")
    _common(p)
    p.add_argument("--input", default=s, help="stimulus JSON (default: catalog)")
    p.add_argument("--index", type=int, default=s, help="catalog entry (0-17)")
    p.add_argument("--ft", type=float, default=s)
    p.add_argument("--theta", type=float, default=s)
    p.add_argument("--temporal-phase", type=float, default=s)
    p.add_argument("--framerate", type=float, default=s)
    p.add_argument("--frames", type=int, default=s)
    p.add_argument("--resolution", type=int, nargs=2, default=s)
    p.add_argument("--fov", type=float, nargs=2, default=s)
    p.add_argument("--gaze", type=float, nargs=2, default=s)
    p.add_argument("--sixteen-bit", action="store_true", default=s)

    p = sub.add_parser("predict", help="flicker-visibility verdict for a video")
    _common(p)
    p.add_argument("--input", default=s, help="descriptor JSON")

    p = sub.add_parser("bandwidth", help="compression gain for one display")
    _common(p)
    p.add_argument("--ppd", type=float, default=s)
    p.add_argument("--fov-h", type=float, default=s)
    p.add_argument("--fov-v", type=float, default=s)
    p.add_argument("--framerate", type=float, default=s)
    p.add_argument("--window", type=int, default=s)
    p.add_argument("--gaze", type=float, nargs=2, default=s)
    p.add_argument("--luminance", type=float, default=s)
    p.add_argument("--mode", choices=["spatialOnly", "spatioTemporal"], default=s)
    p.add_argument("--counting", choices=["analytic", "enumerated"], default=s)
    p.add_argument("--fs-samples", type=int, default=s)
    p.add_argument("--per-band-csv", default=s)
    p.add_argument("--video", default=s, help="raw 8-bit video to filter")
    p.add_argument("--video-out", default=s, help="filtered raw video path")

    p = sub.add_parser("sweep-fig3", help="CFF surfaces of the presets (CSV)")
    _common(p)
    p.add_argument("--e-step", type=float, default=s)
    p.add_argument("--e-max", type=float, default=s)
    p.add_argument("--fs-count", type=int, default=s)
    p.add_argument("--fs-min", type=float, default=s)
    p.add_argument("--fs-max", type=float, default=s)
    p.add_argument("--presets", nargs="+", choices=sorted(PRESETS), default=s)

    p = sub.add_parser("sweep-fig4", help="luminance-scaled CFF curves (CSV)")
    _common(p)
    p.add_argument("--e-step", type=float, default=s)
    p.add_argument("--e-max", type=float, default=s)
    p.add_argument("--fs", type=float, nargs="+", default=s)
    p.add_argument("--luminances", type=float, nargs="+", default=s)

    p = sub.add_parser("sweep-fig6", help="compression gain over field of view (CSV)")
    _common(p)
    p.add_argument("--ppd", type=float, nargs="+", default=s)
    p.add_argument("--framerate", type=float, default=s)
    p.add_argument("--window", type=int, default=s)
    p.add_argument("--fov", type=float, nargs="+", default=s)
    p.add_argument("--modes", nargs="+", choices=["spatialOnly", "spatioTemporal"], default=s)
    p.add_argument("--luminance", type=float, default=s)
    p.add_argument("--fs-samples", type=int, default=s)
    return parser


def resolve(command, flags, config_path=None):
    """Merge defaults, config-file values and explicit flags."""
    defaults = {**COMMON, **DEFAULTS[command]}
    file_values = {}
    if config_path:
        doc = json.loads(Path(config_path).read_text())
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        doc = {k.replace("-", "_"): v for k, v in doc.items()}
        unknown = sorted(set(doc) - set(defaults))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {unknown}")
        file_values = doc
    return {**defaults, **file_values, **flags}


def resolve_model(opts):
    if opts.get("model"):
        return load_model(opts["model"]), f"file:{opts['model']}"
    if opts.get("preset"):
        return CffModel.preset(opts["preset"]), opts["preset"]
    env = os.environ.get(PRESET_ENV)
    if env:
        return load_model(env), f"file:{env}"
    return CffModel.preset("full"), "full"


def digest(payload):
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _write_text(opts, text):
    if opts["output"]:
        Path(opts["output"]).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_eval(opts, model):
    e = np.asarray(opts["e"], dtype=float)
    fs = np.asarray(opts["fs"], dtype=float)
    if e.size != fs.size:
        if e.size == 1 or fs.size == 1:
            e, fs = np.broadcast_arrays(e, fs)
        else:
            raise UsageError("--e and --fs need equal lengths (or one of length 1)")
    L = opts["luminance"]
    if L is None:
        cff = psi(e, fs, model.params)
    else:
        cff = psi_hat(e, fs, L, model.params, model.luminance)
    cff = np.atleast_1d(cff)
    rows = [[_fmt(a), _fmt(b), _fmt(c)] for a, b, c in zip(e, fs, cff)]
    _write_text(opts, _csv_text(["e_deg", "fs_cpd", "cff_hz"], rows))


def cmd_fit(opts, model):
    if not opts["input"]:
        raise UsageError("fit requires --input")
    samples = read_thresholds(opts["input"])
    config = FitConfig(
        mode=opts["mode"],
        penalty_weights={"under": opts["under_weight"], "over": opts["over_weight"],
                         "zero": opts["zero_weight"], "acuity": opts["acuity_weight"]},
        max_iterations=opts["max_iter"], convergence_tol=opts["tol"],
        initialization=opts["initialization"], seed=opts["seed"],
        n_starts=opts["n_starts"], extent_limit=opts["extent_limit"],
        n_jobs=opts["threads"],
    )
    result = fit_cff(samples, config)
    fitted = CffModel(params=result.params, luminance=model.luminance, acuity=model.acuity)
    if opts["luminance_fit"]:
        fitted = CffModel(params=result.params,
                          luminance=fit_luminance(samples, result.params, lum=model.luminance),
                          acuity=model.acuity)
    if opts["output"]:
        save_model(fitted, opts["output"])
    else:
        sys.stdout.write(fitted.to_json() + "\n")
    if opts["report"]:
        write_fit_report(opts["report"], result)
    print(f"adjusted R2: {result.adjusted_r2:.4f}  loss: {result.final_loss:.6g}  "
          f"iterations: {result.n_iter}", file=sys.stderr)


def cmd_acuity(opts, model):
    e = np.asarray(opts["e"], dtype=float)
    a = np.atleast_1d(acuity_limit(e, model.acuity))
    at = np.atleast_1d(psi(e, a, model.params))
    rows = [[_fmt(x), _fmt(y), _fmt(z)] for x, y, z in zip(e, a, at)]
    _write_text(opts, _csv_text(["e_deg", "acuity_cpd", "cff_at_acuity_hz"], rows))


def cmd_stimulus(opts, model):
    if opts["input"]:
        stimuli = load_stimuli(opts["input"])
    else:
        stimuli = stimulus_catalog(theta=opts["theta"], ft=opts["ft"])
        stimuli = [GaborStimulus.from_dict({**s.to_dict(),
                                            "temporal_phase": opts["temporal_phase"]})
                   for s in stimuli]
    if opts["index"] is not None:
        if not 0 <= opts["index"] < len(stimuli):
            raise DomainError(f"stimulus index {opts['index']} out of range")
        stimuli = [stimuli[opts["index"]]]
    out = Path(opts["output"] or "stimuli")
    out.mkdir(parents=True, exist_ok=True)
    geom = DisplayGeometry(resolution=tuple(opts["resolution"]), fov=tuple(opts["fov"]))
    frames_meta = []
    for i, stim in enumerate(stimuli):
        n = opts["frames"]
        if n is None and stim.ft <= 0:
            n = 1
        seq = render_sequence(stim, geom, opts["framerate"], n, tuple(opts["gaze"]))
        for k, frame in enumerate(seq):
            write_pgm(out / f"stim{i:02d}_frame{k:04d}.pgm", frame, opts["sixteen_bit"])
        frames_meta.append(len(seq))
    save_stimuli(out / "stimuli.json", stimuli)
    meta = {**geom.metadata(), "framerate": opts["framerate"], "frames": frames_meta,
            "gaze": list(opts["gaze"])}
    (out / "display.json").write_text(json.dumps(meta, indent=2) + "\n")


def cmd_predict(opts, model):
    if not opts["input"]:
        raise UsageError("predict requires --input")
    descriptors = load_descriptors(opts["input"])
    verdict = predict_visibility(descriptors, model)
    if opts["output"]:
        save_verdict(opts["output"], verdict, descriptors)
    else:
        sys.stdout.write(json.dumps(verdict.to_dict(descriptors), indent=2) + "\n")
    print(verdict.label, file=sys.stderr)


def _analysis(opts):
    return AnalysisConfig(
        ppd=opts["ppd"], fov_h=opts["fov_h"], fov_v=opts["fov_v"],
        framerate=opts["framerate"], temporal_window=opts["window"],
        gaze=tuple(opts["gaze"]), luminance=opts["luminance"], mode=opts["mode"],
        counting=opts["counting"], fs_samples=opts["fs_samples"],
    )


def cmd_bandwidth(opts, model):
    config = _analysis(opts)
    if opts["video"]:
        frames, meta = read_raw_video(opts["video"])
        out = filter_video(frames, config, model)
        target = opts["video_out"] or str(opts["video"]) + ".filtered"
        write_raw_video(target, out, meta.get("framerate", config.framerate))
    report = retained_count(config, model, threads=opts["threads"])
    doc = {"config": config.to_dict(), "totalCoefficients": report.total,
           "retainedCoefficients": report.retained, "gain": report.gain}
    _write_text(opts, json.dumps(doc, indent=2) + "\n")
    if opts["per_band_csv"]:
        cols = list(report.per_band[0])
        Path(opts["per_band_csv"]).write_text(_csv_text(
            cols, [[_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in cols]
                   for r in report.per_band]))


def cmd_sweep_fig3(opts, model):
    e = np.arange(0.0, opts["e_max"] + 1e-9, opts["e_step"])
    fs = np.geomspace(opts["fs_min"], opts["fs_max"], opts["fs_count"])
    E, F = np.meshgrid(e, fs, indexing="ij")
    rows = []
    for name in opts["presets"]:
        c = psi(E, F, PRESETS[name])
        a = acuity_limit(E, model.acuity)
        rows += [[name, _fmt(x), _fmt(y), _fmt(z), _fmt(w)]
                 for x, y, z, w in zip(E.ravel(), F.ravel(), c.ravel(), a.ravel())]
    _write_text(opts, _csv_text(["preset", "e_deg", "fs_cpd", "cff_hz", "acuity_cpd"], rows))


def cmd_sweep_fig4(opts, model):
    e = np.arange(0.0, opts["e_max"] + 1e-9, opts["e_step"])
    rows = []
    for L in opts["luminances"]:
        td = float(effective_illuminance(L))
        for fs in opts["fs"]:
            c = psi_hat(e, fs, L, model.params, model.luminance, illuminance=td)
            rows += [[_fmt(L), _fmt(td), _fmt(x), _fmt(fs), _fmt(y)] for x, y in zip(e, c)]
    header = ["luminance_cdm2", "illuminance_td", "e_deg", "fs_cpd", "cff_hz"]
    _write_text(opts, _csv_text(header, rows))


def cmd_sweep_fig6(opts, model):
    rows = []
    for ppd in opts["ppd"]:
        base = AnalysisConfig(ppd=ppd, framerate=opts["framerate"],
                              temporal_window=opts["window"], luminance=opts["luminance"],
                              fs_samples=opts["fs_samples"])
        rows += gain_sweep(base, opts["fov"], model, opts["modes"], threads=opts["threads"])
    _write_text(opts, sweep_csv_text(rows))


COMMANDS = {
    "eval": cmd_eval, "fit": cmd_fit, "acuity": cmd_acuity, "stimulus": cmd_stimulus,
    "predict": cmd_predict, "bandwidth": cmd_bandwidth, "sweep-fig3": cmd_sweep_fig3,
    "sweep-fig4": cmd_sweep_fig4, "sweep-fig6": cmd_sweep_fig6,
}


def _sidecar_path(command, opts):
    if command == "stimulus":
        return Path(opts["output"] or "stimuli") / "config.json"
    if opts["output"]:
        return Path(str(opts["output"]) + ".config.json")
    return None


def _report_error(exc, code, as_json):
    if as_json:
        doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        print(json.dumps(doc), file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    as_json = "--error-json" in argv
    try:
        ns = build_parser().parse_args(argv)
        flags = {k: v for k, v in vars(ns).items()
                 if k not in ("command", "config", "error_json")}
        opts = resolve(ns.command, flags, ns.config)
        if opts["threads"] < 1:
            raise UsageError("--threads must be at least 1")
        model, label = resolve_model(opts)
        payload = {"command": ns.command, "options": opts, "model": model.to_dict()}
        dig = digest(payload)
        print(f"preset: {label}  config digest: {dig}", file=sys.stderr)
        sidecar = _sidecar_path(ns.command, opts)
        if sidecar is not None:
            sidecar.parent.mkdir(parents=True, exist_ok=True)
            sidecar.write_text(
                json.dumps({**payload, "digest": dig}, indent=2, sort_keys=True) + "\n")
        COMMANDS[ns.command](opts, model)
    except UsageError as exc:
        return _report_error(exc, 2, as_json)
    except (DomainError, ConvergenceError, ValueError, OSError, KeyError) as exc:
        return _report_error(exc, 1, as_json)
    return 0


if __name__ == "__main__":
    sys.exit(main())
