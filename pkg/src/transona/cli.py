"""Command-line entry point: one subcommand per stage plus ``run`` and ``synth``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .afm import HIGH, LOW, build_opportunity_table, fit_iafm, learning_rates_from_csv, \
    learning_rates_to_csv, median_split
from .config import load_config
from .detectors import DetectorParams, run_detectors
from .errors import ConfigError, DataError, TransonaError
from .events import EventSource, merge_streams, stream_from_csv, stream_to_csv
from .ingest import (assign_sessions, clock_offsets, observations_to_csv, parse_layout, parse_observations,
                     parse_positions, parse_tutor_log, session_spans)
from .ona import group_mean_network, sphere_normalize, subtract_networks, NodeLayout
from .pipeline import CODE_SETS, dumps, fit_model, model_stats, run_pipeline, session_first_visits
from .render import RenderStyle, export_dot, render_network, render_subtracted
from .replay import format_replay, replay_windows
from .spatial import (AlignmentParams, VisitParams, detect_visits, infer_orientation, screen_alignment,
                      teacher_trace, visits_from_csv, visits_to_csv)
from .stats import bootstrap_aic_compare, logistic_aic, wilcoxon_rank_sum
from .synth import SynthParams, config_text, params_from_dict, synth_generate
from .tma import (UNIT_MODES, WHOLE, TifConfig, accumulate_units, adjacency_from_csv, adjacency_to_csv,
                  build_units, units_from_csv, units_to_csv)

log = logging.getLogger("transona")


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def _kv(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _groups(path):
    return learning_rates_from_csv(_read(path))[1] if path else {}


def cmd_ingest(a):
    offsets = clock_offsets(_kv(a.offset))
    tutor = parse_tutor_log(_read(a.tutor))
    events = [tutor]
    notes = []
    if a.observations:
        obs, notes = parse_observations(_read(a.observations))
        shift = offsets.get(EventSource.OBSERVATION, 0)
        obs = [e.shifted(shift) for e in obs] if shift else obs
        tutor_shift = offsets.get(EventSource.TUTOR_LOG, 0)
        spans = session_spans([e.shifted(tutor_shift) for e in tutor] if tutor_shift else tutor)
        obs, dropped = assign_sessions(obs, spans, int(a.margin_s * 1000))
        if dropped:
            log.warning("%d observation events fall outside every session", dropped)
        events.append(obs)
        offsets.pop(EventSource.OBSERVATION, None)
    _write(a.output, stream_to_csv(merge_streams(events, offsets)))
    if a.notes:
        _write(a.notes, observations_to_csv(notes=notes))


def cmd_detect(a):
    stream = stream_from_csv(_read(a.stream))
    params = DetectorParams(a.idle_threshold_s, a.misuse_gap_s, a.misuse_run_len, a.struggle_window,
                            a.struggle_rate_cutoff, a.struggle_cooldown)
    kept = [e for e in stream if e.source is not EventSource.DETECTOR]
    detected = run_detectors([e for e in kept if e.source is EventSource.TUTOR_LOG], params)
    _write(a.output, stream_to_csv(merge_streams([kept, detected])))


def cmd_spatial(a):
    stream = stream_from_csv(_read(a.stream))
    layout = parse_layout(_read(a.layout))
    trace = teacher_trace(parse_positions(_read(a.positions)), a.teacher_tag)
    params = AlignmentParams(a.cos_threshold, a.min_displacement_mm, a.max_range_mm)
    aligned = screen_alignment(infer_orientation(trace, params), trace, layout, params)
    sessions = session_spans([e for e in stream if e.source is EventSource.TUTOR_LOG])
    aligned, dropped = assign_sessions(aligned, sessions, int(a.margin_s * 1000))
    if dropped:
        log.warning("%d alignment events fall outside every session", dropped)
    kept = [e for e in stream if e.source is not EventSource.SPATIAL]
    _write(a.output, stream_to_csv(merge_streams([kept, aligned])))
    if a.visits:
        _write(a.visits, visits_to_csv(detect_visits(trace, layout, VisitParams(a.radius_mm, a.min_duration_s))))


def cmd_afm(a):
    stream = stream_from_csv(_read(a.stream))
    table = build_opportunity_table(stream)
    if table.skipped_missing_kc:
        log.warning("%d first attempts lack a kc label and were skipped", table.skipped_missing_kc)
    fit = fit_iafm(table.rows, a.lambda_theta, a.lambda_delta)
    _write(a.output, learning_rates_to_csv(fit, median_split(fit)))


def cmd_units(a):
    stream = stream_from_csv(_read(a.stream))
    layout = parse_layout(_read(a.layout)) if a.layout else None
    first = None
    if a.mode != WHOLE:
        if not a.visits:
            raise ConfigError("--visits is required for split units")
        sessions = session_spans([e for e in stream if e.source is EventSource.TUTOR_LOG])
        first = session_first_visits(visits_from_csv(_read(a.visits)), sessions, int(a.margin_s * 1000))
    _write(a.output, units_to_csv(build_units(stream, layout, first, a.mode)))


def _tif(a):
    return TifConfig(a.tif_tutor_log, a.tif_detector, a.tif_observation, a.tif_spatial)


def cmd_accumulate(a):
    units = units_from_csv(_read(a.units))
    vectors = accumulate_units(units, _tif(a), CODE_SETS[a.codes], a.binary, a.threads)
    _write(a.output, adjacency_to_csv(vectors, _groups(a.groups)))


def _labelled(table):
    labels = list(table.groups)
    keep = [i for i, g in enumerate(labels) if g]
    if len(keep) < len(labels):
        log.warning("%d units without a label were left out", len(labels) - len(keep))
    return [table.keys[i] for i in keep], [labels[i] for i in keep], table.matrix[keep]


def cmd_model(a):
    table = adjacency_from_csv(_read(a.adjacency))
    keys, labels, matrix = _labelled(table)
    model = fit_model(keys, labels, matrix, table.codes, a.positive_group, a.ridge)
    out = Path(a.out_dir)
    _write(out / "scores.csv", model.scores_csv())
    _write(out / "nodes.csv", model.nodes_csv())
    _write(out / "basis.json", dumps(model.basis.to_dict()))
    if a.stats:
        _write(out / "model_stats.json", dumps(model_stats(model, a.positive_group)))


def _read_scores(path):
    rows = list(csv.DictReader(io.StringIO(_read(path))))
    if not rows or list(rows[0]) != ["unit", "phase", "group", "x", "y"]:
        raise DataError(f"{path}: scores CSV must have columns unit,phase,group,x,y")
    return ([(r["unit"], r["phase"]) for r in rows], np.array([r["group"] for r in rows]),
            np.array([[float(r["x"]), float(r["y"])] for r in rows]))


def cmd_stats(a):
    keys, groups, xy = _read_scores(a.scores)
    pos = groups == a.positive_group
    y = (~pos).astype(float)
    report = {"rank_sum_x": wilcoxon_rank_sum(xy[pos, 0], xy[~pos, 0]).to_dict(),
              "rank_sum_y": wilcoxon_rank_sum(xy[pos, 1], xy[~pos, 1]).to_dict(),
              "logistic": logistic_aic(xy, y).to_dict()}
    if a.scores_b:
        keys_b, groups_b, xy_b = _read_scores(a.scores_b)
        if keys_b != keys or list(groups_b) != list(groups):
            raise DataError("both score files must list the same units and groups in the same order")
        if a.seed is None:
            raise ConfigError("--seed is required for the bootstrap comparison")
        report["bootstrap"] = bootstrap_aic_compare(xy, xy_b, y, a.replicates, a.seed).to_dict()
    _write(a.output, dumps(report))


def _layout_from_nodes(path):
    rows = list(csv.DictReader(io.StringIO(_read(path))))
    if rows and list(rows[0]) != ["code", "x", "y"]:
        raise DataError(f"{path}: node CSV must have columns code,x,y")
    pts = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
    return NodeLayout(tuple(r["code"] for r in rows), pts, float("nan"), float("nan"), float("nan"))


def cmd_render(a):
    table = adjacency_from_csv(_read(a.adjacency))
    layout = _layout_from_nodes(a.nodes)
    keys, labels, matrix = _labelled(table)
    normalized, _ = sphere_normalize(matrix)
    other = next((g for g in sorted(set(labels)) if g != a.positive_group), None)
    style = RenderStyle()
    out = Path(a.out_dir)
    nets = {}
    for g, color in ((a.positive_group, style.color_a), (other, style.color_b)):
        if g is None:
            continue
        nets[g] = group_mean_network(normalized, labels, g, table.codes)
        _write(out / f"network_{g}.svg", render_network(layout, nets[g], style, color, f"{g} mean network"))
        if a.dot:
            _write(out / f"network_{g}.dot", export_dot(layout, nets[g], style))
    if other is not None:
        sub = subtract_networks(nets[a.positive_group], nets[other])
        _write(out / "subtracted.svg", render_subtracted(layout, sub, style, f"{a.positive_group} minus {other}"))


def cmd_replay(a):
    _, notes = parse_observations(_read(a.observations))
    stream = stream_from_csv(_read(a.stream))
    students = [s for s in a.students.split(",") if s] if a.students else None
    report = replay_windows(notes, stream, a.code, students, a.k, _groups(a.groups))
    _write(a.output, format_replay(report) if a.text else dumps(report))


def cmd_synth(a):
    raw = json.loads(_read(a.params)) if a.params else {}
    for key in ("seed", "n_students", "n_days", "n_periods", "session_minutes"):
        value = getattr(a, key)
        if value is not None:
            raw[key] = value
    params = params_from_dict(raw)
    data = synth_generate(params)
    data.write(a.out_dir)
    cfg = Path(a.out_dir) / "config.toml"
    cfg.write_text(config_text(params.seed, "out", a.replicates, params.align_range_mm))
    print(f"wrote synthetic classroom ({params.n_students} students) and {cfg}")


def cmd_run(a):
    cfg = load_config(a.config)
    if a.output_dir:
        cfg.values["output"]["dir"] = str(Path(a.output_dir).resolve())
    result = run_pipeline(cfg)
    print(json.dumps({"output_dir": str(result.output_dir), **result.summary}, indent=2, sort_keys=True))


def _parser():
    p = argparse.ArgumentParser(prog="transona", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker cap (mirrors TRANSONA_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="parse tutor and observer exports into a merged stream CSV")
    s.add_argument("--tutor", required=True)
    s.add_argument("--observations")
    s.add_argument("--offset", action="append", metavar="SOURCE=MS", help="clock offset, repeatable")
    s.add_argument("--margin-s", type=float, default=60.0)
    s.add_argument("--notes", help="write unrecognized observer rows here")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_ingest)

    d = DetectorParams()
    s = sub.add_parser("detect", help="add IDLING / TUTOR_MISUSE / STRUGGLING events")
    s.add_argument("--stream", required=True)
    s.add_argument("--idle-threshold-s", type=float, default=d.idle_threshold_s)
    s.add_argument("--misuse-gap-s", type=float, default=d.misuse_gap_s)
    s.add_argument("--misuse-run-len", type=int, default=d.misuse_run_len)
    s.add_argument("--struggle-window", type=int, default=d.struggle_window)
    s.add_argument("--struggle-rate-cutoff", type=float, default=d.struggle_rate_cutoff)
    s.add_argument("--struggle-cooldown", type=int, default=d.struggle_cooldown)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_detect)

    al, vp = AlignmentParams(), VisitParams()
    s = sub.add_parser("spatial", help="add SCREEN_ALIGNMENT events and detect visits")
    s.add_argument("--stream", required=True)
    s.add_argument("--positions", required=True)
    s.add_argument("--layout", required=True)
    s.add_argument("--teacher-tag")
    s.add_argument("--cos-threshold", type=float, default=al.cos_threshold)
    s.add_argument("--min-displacement-mm", type=float, default=al.min_displacement_mm)
    s.add_argument("--max-range-mm", type=float, default=None)
    s.add_argument("--radius-mm", type=float, default=vp.radius_mm)
    s.add_argument("--min-duration-s", type=float, default=vp.min_duration_s)
    s.add_argument("--margin-s", type=float, default=60.0)
    s.add_argument("--visits", help="write the visit list here")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_spatial)

    s = sub.add_parser("afm", help="fit iAFM learning rates and median-split students")
    s.add_argument("--stream", required=True)
    s.add_argument("--lambda-theta", type=float, default=1.0)
    s.add_argument("--lambda-delta", type=float, default=1.0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_afm)

    s = sub.add_parser("units", help="build horizon-filtered unit contexts")
    s.add_argument("--stream", required=True)
    s.add_argument("--layout")
    s.add_argument("--visits")
    s.add_argument("--mode", choices=UNIT_MODES, default=WHOLE)
    s.add_argument("--margin-s", type=float, default=60.0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_units)

    tif = TifConfig()
    s = sub.add_parser("accumulate", help="directed connection counts per unit")
    s.add_argument("--units", required=True)
    s.add_argument("--codes", choices=sorted(CODE_SETS), default="multimodal")
    s.add_argument("--groups", help="learning-rate CSV providing the group column")
    s.add_argument("--binary", action="store_true")
    s.add_argument("--tif-tutor-log", type=float, default=tif.tutor_log)
    s.add_argument("--tif-detector", type=float, default=tif.detector)
    s.add_argument("--tif-observation", type=float, default=tif.observation)
    s.add_argument("--tif-spatial", type=float, default=tif.spatial)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_accumulate)

    s = sub.add_parser("model", help="normalize, means-rotate and co-register an adjacency table")
    s.add_argument("--adjacency", required=True)
    s.add_argument("--positive-group", choices=(LOW, HIGH), default=LOW)
    s.add_argument("--ridge", type=float, default=1e-6)
    s.add_argument("--stats", action="store_true", help="also write per-model statistics")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_model)

    s = sub.add_parser("stats", help="rank-sum, logistic AIC and optional bootstrap comparison")
    s.add_argument("--scores", required=True)
    s.add_argument("--scores-b", help="second model's scores for the bootstrap AIC comparison")
    s.add_argument("--positive-group", choices=(LOW, HIGH), default=LOW)
    s.add_argument("--replicates", type=int, default=1000)
    s.add_argument("--seed", type=int)
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("render", help="SVG (and DOT) figures from adjacency and node layout")
    s.add_argument("--adjacency", required=True)
    s.add_argument("--nodes", required=True)
    s.add_argument("--positive-group", choices=(LOW, HIGH), default=LOW)
    s.add_argument("--dot", action="store_true")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("replay", help="observer notes around target events")
    s.add_argument("--observations", required=True)
    s.add_argument("--stream", required=True)
    s.add_argument("--code", default="HINT_REQUEST")
    s.add_argument("--students", help="comma-separated ids (default: everyone)")
    s.add_argument("--groups")
    s.add_argument("-k", type=int, default=3)
    s.add_argument("--text", action="store_true", help="plain text instead of JSON")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("synth", help="write a seeded synthetic classroom and a matching config")
    s.add_argument("--seed", type=int)
    s.add_argument("--n-students", type=int)
    s.add_argument("--n-days", type=int)
    s.add_argument("--n-periods", type=int)
    s.add_argument("--session-minutes", type=float)
    s.add_argument("--params", help="JSON file of generator parameters")
    s.add_argument("--replicates", type=int, default=1000, help="bootstrap replicates in the emitted config")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("run", help="full pipeline from a TOML config")
    s.add_argument("config")
    s.add_argument("--output-dir", help="override output.dir")
    s.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be positive")
        os.environ["TRANSONA_THREADS"] = str(args.threads)
    try:
        args.func(args)
    except TransonaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        # parameter objects validate themselves with plain ValueError
        print(f"error: invalid parameter: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
