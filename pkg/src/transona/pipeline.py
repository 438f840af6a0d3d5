"""End-to-end run: raw exports in, networks, scores, statistics and figures out."""
from __future__ import annotations

import contextlib
import json
import logging
import math
import shutil
import tempfile
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import thread_cap
from .afm import HIGH, LOW, build_opportunity_table, fit_iafm, learning_rates_to_csv, median_split
from .config import PipelineConfig, check_inputs
from .detectors import run_detectors
from .errors import ConvergenceError, DataError, TransonaError
from .events import (BUILTIN_CODES, DETECTOR_CODES, TIE_ORDER, TUTOR_CODES, Code, EventSource, Phase,
                     base_rates, merge_streams, stream_to_csv, student_sort_key)
from .ingest import (assign_sessions, parse_layout, parse_observations, parse_positions, parse_tutor_log,
                     session_spans)
from .ona import (coregister, group_mean_network, means_rotation, sphere_normalize, subtract_networks)
from .render import export_dot, render_network, render_subtracted
from .replay import replay_windows
from .spatial import detect_visits, infer_orientation, screen_alignment, teacher_trace, visits_to_csv
from .stats import (R_CONVENTION, W_CONVENTION, bootstrap_aic_compare, logistic_aic, poisson_rate_ratio,
                    wilcoxon_rank_sum, wilcoxon_signed_rank)
from .tma import SPLIT_BY_FIRST_VISIT, WHOLE, accumulate_units, adjacency_to_csv, build_units, edge_labels

log = logging.getLogger("transona")

MULTIMODAL = "multimodal"
IN_TUTOR = "in_tutor"
CODE_SETS = {MULTIMODAL: tuple(BUILTIN_CODES), IN_TUTOR: tuple(TUTOR_CODES) + tuple(DETECTOR_CODES)}

CORE_ARTIFACTS = ("adjacency.csv", "scores.csv", "nodes.csv", "stats.json", "run_metadata.json",
                  "network_LOW.svg", "network_HIGH.svg", "subtracted.svg")
_RUN_MARKER = "run_metadata.json"


@contextlib.contextmanager
def stage(name):
    """Re-raise any failure inside the block tagged with the stage name."""
    log.info("stage %s", name)
    try:
        yield
    except TransonaError as exc:
        if getattr(exc, "stage", None):
            raise
        new = type(exc)(f"stage {name}: {exc}")
        new.stage = name
        raise new from exc
    except np.linalg.LinAlgError as exc:
        new = ConvergenceError(f"stage {name}: {exc}")
        new.stage = name
        raise new from exc
    except (ValueError, KeyError, TypeError) as exc:
        new = DataError(f"stage {name}: {type(exc).__name__}: {exc}")
        new.stage = name
        raise new from exc


def clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "NaN"
        if math.isinf(v):
            return "Infinity" if v > 0 else "-Infinity"
        return v
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dumps(obj):
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


@dataclass
class OnaModel:
    codes: tuple
    keys: list
    labels: list
    raw: np.ndarray
    normalized: np.ndarray
    zero_rows: np.ndarray
    basis: object
    scores: object
    layout: object
    networks: dict
    subtracted: object

    def scores_csv(self):
        lines = ["unit,phase,group,x,y"]
        for k, g, x, y in zip(self.keys, self.labels, self.scores.x, self.scores.y):
            lines.append(f"{k.label},{k.phase.value if k.phase else ''},{g},{float(x)!r},{float(y)!r}")
        return "\n".join(lines) + "\n"

    def nodes_csv(self):
        lines = ["code,x,y"]
        for c, (x, y) in zip(self.layout.codes, self.layout.points):
            lines.append(f"{c},{float(x)!r},{float(y)!r}")
        return "\n".join(lines) + "\n"


def fit_model(keys, labels, matrix, codes, positive_group, ridge, other_group=None) -> OnaModel:
    """Normalize, rotate, co-register and average one labelled unit matrix."""
    labels = [str(g) for g in labels]
    normalized, zero = sphere_normalize(matrix)
    basis, scores = means_rotation(normalized, labels, positive_group)
    layout = coregister(normalized, scores, codes, ridge)
    other = other_group or next(g for g in sorted(set(labels)) if g != str(positive_group))
    nets = {g: group_mean_network(normalized, labels, g, codes) for g in (str(positive_group), other)}
    sub = subtract_networks(nets[str(positive_group)], nets[other])
    return OnaModel(tuple(codes), list(keys), labels, np.asarray(matrix, dtype=float), normalized, zero,
                    basis, scores, layout, nets, sub)


def edge_tests(model: OnaModel):
    out = []
    for a in model.codes:
        for b in model.codes:
            wa, wb = model.subtracted.member_weights(a, b)
            entry = {"edge": f"{a}->{b}", "mean_" + model.subtracted.label_a: float(wa.mean()),
                     "mean_" + model.subtracted.label_b: float(wb.mean()),
                     "difference": float(wa.mean() - wb.mean()), "test": None}
            if np.any(wa != 0) or np.any(wb != 0):
                entry["test"] = wilcoxon_rank_sum(wa, wb).to_dict()
            out.append(entry)
    return out


def model_stats(model: OnaModel, positive_group):
    labels = np.asarray(model.labels)
    pos = labels == str(positive_group)
    y = (~pos).astype(float)
    return {
        "codes": list(model.codes),
        "units": len(model.keys),
        "zero_rows": int(model.zero_rows.sum()),
        "group_sizes": {g: int(np.sum(labels == g)) for g in sorted(set(model.labels))},
        "rank_sum_x": wilcoxon_rank_sum(model.scores.x[pos], model.scores.x[~pos]).to_dict(),
        "rank_sum_y": wilcoxon_rank_sum(model.scores.y[pos], model.scores.y[~pos]).to_dict(),
        "logistic": logistic_aic(model.scores.as_array(), y).to_dict(),
        "logistic_outcome": f"1 = not {positive_group}",
        "coregistration": {"objective": model.layout.objective, "grad_norm": model.layout.grad_norm,
                           "ridge": model.layout.ridge},
        "edges": edge_tests(model),
    }


@dataclass
class RunResult:
    output_dir: Path
    files: list
    summary: dict
    metadata: dict = field(default_factory=dict)


def _read(path):
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None


def _shift(events, offset):
    return [ev.shifted(offset) for ev in events] if offset else list(events)


def session_first_visits(visits, sessions, margin_ms):
    """First visit start per (student, day, period)."""
    out = {}
    for v in visits:
        best, best_d = None, None
        for s in sessions:
            d = 0 if s.start <= v.start <= s.end else min(abs(v.start - s.start), abs(v.start - s.end))
            if d <= margin_ms and (best_d is None or d < best_d):
                best, best_d = s, d
        if best is not None:
            key = (v.student, best.day, best.period)
            if key not in out or v.start < out[key]:
                out[key] = v.start
    return out


def _visit_analysis(stream, layout, first_visits, groups, cfg, tif, threads):
    units = build_units(stream, layout, first_visits, SPLIT_BY_FIRST_VISIT)
    units = {k: u for k, u in units.items() if k.student in groups}
    codes = CODE_SETS[MULTIMODAL]
    vectors = accumulate_units(units, tif, codes, cfg.get("tma.binary"), threads)
    keys = list(vectors)
    phases = [k.phase.value for k in keys]
    if len(set(phases)) < 2:
        return {"skipped": "no visited units; pre/post comparison impossible"}, None, None
    matrix = np.vstack([vectors[k].vector for k in keys])
    model = fit_model(keys, phases, matrix, codes, Phase.PRE_VISIT.value, cfg.get("model.coregister_ridge"),
                      Phase.POST_VISIT.value)
    report = {"positive_phase": Phase.PRE_VISIT.value, "units": len(keys), "groups": {}}
    for g in (LOW, HIGH):
        per = {}
        for k, x in zip(keys, model.scores.x):
            if groups.get(k.student) == g:
                per.setdefault(k.student, {}).setdefault(k.phase.value, []).append(float(x))
        paired = sorted((s for s, d in per.items() if len(d) == 2), key=student_sort_key)
        pre = [float(np.mean(per[s][Phase.PRE_VISIT.value])) for s in paired]
        post = [float(np.mean(per[s][Phase.POST_VISIT.value])) for s in paired]
        entry = {"students": len(paired), "mean_pre_x": float(np.mean(pre)) if pre else None,
                 "mean_post_x": float(np.mean(post)) if post else None, "signed_rank": None}
        if paired:
            try:
                entry["signed_rank"] = wilcoxon_signed_rank(pre, post).to_dict()
            except DataError as exc:
                entry["signed_rank"] = {"rejected": str(exc)}
        report["groups"][g] = entry
    return report, model, vectors


def run_pipeline(cfg: PipelineConfig) -> RunResult:
    """Run every stage; outputs appear atomically in ``cfg.output_dir`` or not at all."""
    check_inputs(cfg)
    out_dir = cfg.output_dir
    if out_dir.exists() and any(out_dir.iterdir()) and not (out_dir / _RUN_MARKER).exists():
        raise DataError(f"output directory {out_dir} is not empty and holds no previous run")
    artifacts = {}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        summary, metadata = _run_stages(cfg, artifacts)
    warns = sorted({str(w.message) for w in caught})
    metadata["warnings"] = warns
    artifacts["run_metadata.json"] = dumps(metadata)

    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=out_dir.parent))
    try:
        for name, text in sorted(artifacts.items()):
            path = tmp / name
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text)
        if out_dir.exists():
            shutil.rmtree(out_dir)
        tmp.rename(out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return RunResult(out_dir, sorted(artifacts), summary, metadata)


def _run_stages(cfg: PipelineConfig, artifacts: dict):
    offsets = cfg.offsets
    threads = thread_cap(cfg.get("runtime.threads"))
    margin_ms = int(round(cfg.get("sessions.margin_s") * 1000))
    tif = cfg.tif
    diagnostics = {}

    with stage("ingest"):
        tutor = _shift(parse_tutor_log(_read(cfg.input_path("tutor"))), offsets[EventSource.TUTOR_LOG])
        obs_events, notes = parse_observations(_read(cfg.input_path("observations")))
        obs_events = _shift(obs_events, offsets[EventSource.OBSERVATION])
        off = offsets[EventSource.OBSERVATION]
        notes = [type(n)(n.timestamp + off, n.label, n.student, n.note) for n in notes] if off else notes
        positions = parse_positions(_read(cfg.input_path("positions")))
        off = offsets[EventSource.SPATIAL]
        if off:
            positions = [type(p)(p.timestamp + off, p.x, p.y, p.tag) for p in positions]
        layout = parse_layout(_read(cfg.input_path("layout")))
        if not tutor:
            raise DataError("tutor log holds no transactions")
        sessions = session_spans(tutor)
        obs_events, diagnostics["observations_outside_sessions"] = assign_sessions(
            obs_events, sessions, margin_ms)

    with stage("detectors"):
        detected = run_detectors(tutor, cfg.detector_params)

    with stage("spatial"):
        trace = teacher_trace(positions, cfg.get("spatial.teacher_tag"))
        aligned = screen_alignment(infer_orientation(trace, cfg.alignment_params), trace, layout,
                                   cfg.alignment_params)
        aligned, diagnostics["alignments_outside_sessions"] = assign_sessions(aligned, sessions, margin_ms)
        visits = detect_visits(trace, layout, cfg.visit_params)
        first_visits = session_first_visits(visits, sessions, margin_ms)
        artifacts["visits.csv"] = visits_to_csv(visits)

    with stage("afm"):
        table = build_opportunity_table(tutor)
        diagnostics["opportunity_rows_missing_kc"] = table.skipped_missing_kc
        fit = fit_iafm(table.rows, cfg.get("afm.lambda_theta"), cfg.get("afm.lambda_delta"))
        assignment = median_split(fit)
        groups = assignment.groups
        artifacts["learning_rates.csv"] = learning_rates_to_csv(fit, assignment)

    with stage("merge"):
        stream = merge_streams([tutor, detected, obs_events, aligned])
        artifacts["merged_stream.csv"] = stream_to_csv(stream)

    with stage("units"):
        units = build_units(stream, layout, None, WHOLE)
        ungrouped = sorted({k.student for k in units if k.student not in groups}, key=student_sort_key)
        diagnostics["units_without_learning_rate"] = ungrouped
        units = {k: u for k, u in units.items() if k.student in groups}
        if not units:
            raise DataError("no analysis units with a fitted learning rate")

    models, vectors_by_set = {}, {}
    for name, codes in CODE_SETS.items():
        with stage(f"accumulate[{name}]"):
            vectors = accumulate_units(units, tif, codes, cfg.get("tma.binary"), threads)
            vectors_by_set[name] = vectors
        with stage(f"model[{name}]"):
            keys = list(vectors)
            matrix = np.vstack([vectors[k].vector for k in keys])
            models[name] = fit_model(keys, [groups[k.student] for k in keys], matrix, codes,
                                     cfg.get("model.positive_group"), cfg.get("model.coregister_ridge"))

    positive = cfg.get("model.positive_group")
    mm = models[MULTIMODAL]
    with stage("stats"):
        report = {
            "conventions": {"W": W_CONVENTION, "r": R_CONVENTION, "tie_order": list(TIE_ORDER),
                            "bootstrap": "A = multimodal, B = in-tutor only; Welch unpaired t on AICs",
                            "subtracted": f"{positive} minus other"},
            "groups": {"split": assignment.split, "tie_warning": assignment.tie_warning,
                       "sizes": {g: len(assignment.members(g)) for g in (LOW, HIGH)}},
            "models": {name: model_stats(m, positive) for name, m in models.items()},
        }
        y = np.asarray([0.0 if g == positive else 1.0 for g in mm.labels])
        boot = bootstrap_aic_compare(mm.scores.as_array(), models[IN_TUTOR].scores.as_array(), y,
                                     cfg.get("bootstrap.replicates"), cfg.get("bootstrap.seed"))
        report["bootstrap"] = boot.to_dict()
        report["bootstrap"]["model_a"] = MULTIMODAL
        report["bootstrap"]["model_b"] = IN_TUTOR
        report["rate_ratio"] = _question_rate_ratio(notes, groups)
        report["base_rates"] = base_rates(stream)
        visit_model = None
        if cfg.get("model.unit_mode") == SPLIT_BY_FIRST_VISIT:
            report["visit_analysis"], visit_model, split_vectors = _visit_analysis(
                stream, layout, first_visits, groups, cfg, tif, threads)
        else:
            report["visit_analysis"] = None

    with stage("replay"):
        rep = replay_windows(notes, stream, cfg.get("replay.code"), None, cfg.get("replay.k"), groups)
        artifacts["replay.json"] = dumps(rep)

    style = cfg.style
    with stage("render"):
        other = HIGH if positive == LOW else LOW
        for name, m in models.items():
            suffix = "" if name == MULTIMODAL else f"_{name}"
            for g, color in ((positive, style.color_a), (other, style.color_b)):
                artifacts[f"network_{g}{suffix}.svg"] = render_network(
                    m.layout, m.networks[g], style, color, f"{g} mean network ({name})")
                artifacts[f"network_{g}{suffix}.dot"] = export_dot(m.layout, m.networks[g], style)
            artifacts[f"subtracted{suffix}.svg"] = render_subtracted(
                m.layout, m.subtracted, style, f"{positive} minus {other} ({name})")
        if visit_model is not None:
            artifacts["subtracted_visit.svg"] = render_subtracted(
                visit_model.layout, visit_model.subtracted, style, "pre-visit minus post-visit")

    for name, m in models.items():
        suffix = "" if name == MULTIMODAL else f"_{name}"
        artifacts[f"adjacency{suffix}.csv"] = adjacency_to_csv(vectors_by_set[name], groups)
        artifacts[f"scores{suffix}.csv"] = m.scores_csv()
        artifacts[f"nodes{suffix}.csv"] = m.nodes_csv()
        artifacts[f"basis{suffix}.json"] = dumps(m.basis.to_dict())
    if visit_model is not None:
        artifacts["adjacency_visit.csv"] = adjacency_to_csv(split_vectors, groups)
        artifacts["scores_visit.csv"] = visit_model.scores_csv()
        artifacts["nodes_visit.csv"] = visit_model.nodes_csv()
    artifacts["stats.json"] = dumps(report)

    mm_stats = report["models"][MULTIMODAL]
    summary = {
        "units": len(mm.keys),
        "students": len(groups),
        "mr_rank_sum_p": mm_stats["rank_sum_x"]["p"],
        "bootstrap_preferred": MULTIMODAL if boot.preferred == "A" else (IN_TUTOR if boot.preferred else None),
        "bootstrap_p": boot.p,
        "aic_multimodal": boot.mean_a,
        "aic_in_tutor": boot.mean_b,
    }
    metadata = {
        "version": __version__,
        "config": cfg.echo(),
        "defaults_applied": list(cfg.defaults_applied),
        "code_sets": {k: list(v) for k, v in CODE_SETS.items()},
        "edge_labels": edge_labels(CODE_SETS[MULTIMODAL]),
        "decisions": {
            "tie_order": list(TIE_ORDER),
            "public_codes": [Code.TALKING.value],
            "connection_counting": "binary" if cfg.get("tma.binary") else "multiplicity",
            "learning_rate": "one deviation per student shared across kcs",
            "split": "per-session first visit start; events at that instant go to POST_VISIT",
            "session_assignment": f"observer and spatial events stamped from tutor spans within {margin_ms} ms",
            "rank_sum": W_CONVENTION,
            "effect_size": R_CONVENTION,
            "bootstrap_test": "Welch unpaired t-test",
        },
        "afm": {"converged": fit.converged, "iterations": fit.iterations, "grad_norm": fit.grad_norm,
                "loglik": fit.loglik, "split": assignment.split},
        "diagnostics": diagnostics,
        "counts": {"tutor_events": len(tutor), "detector_events": len(detected),
                   "observation_events": len(obs_events), "notes": len(notes),
                   "alignment_events": len(aligned), "visits": len(visits), "stream_events": len(stream),
                   "position_samples": len(trace)},
        "summary": summary,
    }
    return summary, metadata


def _question_rate_ratio(notes, groups):
    """Questions among teacher notes, LOW relative to HIGH (notes credited to their student's group)."""
    counts = {LOW: [0, 0], HIGH: [0, 0]}
    for n in notes:
        g = groups.get(n.student or "")
        if g is None:
            continue
        counts[g][1] += 1
        if "?" in (n.note or "") or "?" in n.label:
            counts[g][0] += 1
    result = {"groups": {g: {"questions": c[0], "notes": c[1]} for g, c in counts.items()}, "ratio": None}
    if counts[LOW][1] > 0 and counts[HIGH][1] > 0:
        result["ratio"] = poisson_rate_ratio(counts[LOW][0], counts[LOW][1],
                                             counts[HIGH][0], counts[HIGH][1]).to_dict()
    return result
