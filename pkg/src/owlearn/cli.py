"""Command-line entry point: synthesize feature files, calibrate, run
experiments and grids, and compare report sets."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .feature_io import (
    BlobGeometry,
    FeatureSet,
    StreamConfig,
    load_features,
    synthesize_stream,
    write_features,
)
from .pipeline import (
    Agent,
    AgentConfig,
    paired_comparison,
    report_to_json,
    run_experiment,
    run_single,
)

log = logging.getLogger("owlearn")

LEARNER_CHOICES = ("oncm", "onno", "ogmm", "ocbcl", "oscail", "mevm", "fevm")
DETECTOR_ALIASES = {"softmax": "softmax", "energy": "energy", "evm": "evm_score"}


def _setup_logging() -> None:
    level = os.environ.get("OWL_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _stream_config(doc: dict) -> StreamConfig:
    return StreamConfig.from_json(doc["stream"])


def _geometry(doc: dict) -> BlobGeometry:
    return BlobGeometry.from_json(doc.get("geometry", {}))


def _agent_config(doc: dict, args) -> AgentConfig:
    agent_doc = dict(doc.get("agent", {}))
    if getattr(args, "detector", None):
        agent_doc.setdefault("detector", {})
        agent_doc["detector"] = {**agent_doc["detector"],
                                 "kind": DETECTOR_ALIASES[args.detector]}
    if getattr(args, "learner", None):
        if args.learner == "fevm":
            agent_doc["mode"] = agent_doc.get("mode", "towl_fevm")
            if agent_doc["mode"] in ("towl_lc", "towl_fevm"):
                agent_doc["mode"] = "towl_fevm"
            agent_doc["base"] = "towl_fevm"
        else:
            if agent_doc.get("mode") in (None, "towl_fevm", "towl_lc"):
                agent_doc["mode"] = "towl_lc"
            agent_doc["base"] = "towl_lc"
            agent_doc["learner"] = args.learner
    if getattr(args, "partition_mode", None):
        agent_doc.setdefault("manager", {})
        agent_doc["manager"]["partition_mode"] = args.partition_mode
    if getattr(args, "gate", None):
        agent_doc.setdefault("manager", {})
        if args.gate == "labels":
            agent_doc["mode"] = "with_label"
        else:
            agent_doc["manager"]["gate_enabled"] = args.gate == "on"
    return AgentConfig.from_json(agent_doc)


def cmd_synth(args) -> int:
    doc = _load_config(args.config)
    config = _stream_config(doc)
    geometry = _geometry(doc)
    seed = config.seed if args.seed is None else args.seed
    pretrain, validation, batches = synthesize_stream(config, geometry, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stream = FeatureSet(
        pretrain.dim,
        np.concatenate([b.vectors for b in batches]),
        np.concatenate([b.labels for b in batches]),
        [sid for b in batches for sid in b.source_ids],
    )
    write_features(pretrain, out / "pretrain.owlf")
    write_features(validation, out / "validation.owlf")
    write_features(stream, out / "stream.owlf")
    (out / "stream_config.json").write_text(
        json.dumps({"stream": config.to_json(), "geometry": geometry.to_json(),
                    "seed": seed}, indent=2, sort_keys=True)
    )
    log.info("wrote synthetic stream to %s", out)
    return 0


def cmd_calibrate(args) -> int:
    doc = _load_config(args.config)
    agent_config = _agent_config(doc, args)
    data = doc.get("data")
    if data:
        pretrain = load_features(data["pretrain"])
        validation = load_features(data["validation"])
    else:
        config = _stream_config(doc)
        seed = config.seed if args.seed is None else args.seed
        pretrain, validation, _ = synthesize_stream(config, _geometry(doc), seed)
    agent = Agent(agent_config, pretrain, validation)
    out = {
        "detector": agent.detector.to_json() if agent.detector else None,
        "gate": agent.gate.to_json() if agent.gate else None,
    }
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def _batches_from_file(stream: FeatureSet, batch_size: int) -> list[FeatureSet]:
    count = len(stream) // batch_size
    return [
        stream.subset(np.arange(b * batch_size, (b + 1) * batch_size))
        for b in range(count)
    ]


def cmd_run(args) -> int:
    doc = _load_config(args.config)
    config = _stream_config(doc)
    agent_config = _agent_config(doc, args)
    geometry = _geometry(doc)
    data = doc.get("data")
    if data:
        pretrain = load_features(data["pretrain"])
        validation = load_features(data["validation"])
        stream = load_features(*data["stream"]) if isinstance(data["stream"], list) \
            else load_features(data["stream"])
        batches = _batches_from_file(stream, config.batch_size)
        seed = config.seed if args.seed is None else args.seed
        report = run_single_from_data(config, agent_config, geometry, seed,
                                      pretrain, validation, batches)
    elif args.seed is not None:
        report = run_experiment(config, agent_config, geometry, seeds=[args.seed])
    else:
        report = run_experiment(config, agent_config, geometry)
    text = report_to_json(report)
    if args.out:
        out = Path(args.out)
        if out.is_dir() or str(args.out).endswith(os.sep):
            out.mkdir(parents=True, exist_ok=True)
            out = out / "report.json"
        else:
            out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        log.info("wrote report to %s", out)
    else:
        print(text)
    return 0


def run_single_from_data(config, agent_config, geometry, seed,
                         pretrain, validation, batches) -> dict:
    """File-backed variant of a single run, wrapped in the report schema."""
    from .pipeline import Agent as _Agent
    from .pipeline import _window_inputs, _window_record  # noqa:, internal reuse

    agent = _Agent(agent_config, pretrain, validation)
    if agent_config.labeled:
        agent.truth_lookup = {
            sid: int(lab)
            for batch in batches
            for sid, lab in zip(batch.source_ids, batch.labels)
        }
    batch_records, window_truths, window_preds = [], [], []
    window = min(10, len(batches))
    for b, batch in enumerate(batches):
        truths, preds = [], []
        for sid, lab, vec in zip(batch.source_ids, batch.labels, batch.vectors):
            outcome = agent.step(sid, vec)
            truths.append(int(lab))
            preds.append(outcome.predicted)
        batch_records.append(_window_record(_window_inputs(truths, preds, agent.known_set)))
        if b >= len(batches) - window:
            window_truths.extend(truths)
            window_preds.extend(preds)
    final = _window_record(_window_inputs(window_truths, window_preds, agent.known_set))
    run = {"seed": seed, "batches": batch_records, "final_window": final,
           "discovered_classes": agent.discovered_count}
    return {
        "stream": config.to_json(),
        "geometry": geometry.to_json(),
        "agent": agent_config.to_json(),
        "seeds": [seed],
        "runs": [run],
        "owm_per_run": [final["owm"]],
        "owm_mean": final["owm"],
        "owm_std": 0.0,
    }


def _grid_cells(doc: dict) -> list[dict]:
    grid = doc["grid"]
    detectors = grid.get("detectors", ["softmax"])
    learners = grid.get("learners", ["fevm"])
    unknown_counts = grid.get("unknown_class_counts",
                              [doc["stream"]["unknown_class_count"]])
    managers = grid.get("manager_variants", [{}])
    cells = []
    for det in detectors:
        for learner in learners:
            for unknown in unknown_counts:
                for i, mgr in enumerate(managers):
                    name = f"{det}+{learner}+u{unknown}"
                    if len(managers) > 1:
                        name += f"+m{i}"
                    cells.append({
                        "name": name,
                        "detector": det,
                        "learner": learner,
                        "unknown_class_count": unknown,
                        "manager": mgr,
                    })
    return cells


def _run_cell(payload: str) -> str:
    doc = json.loads(payload)
    cell = doc["cell"]
    stream_doc = dict(doc["stream"])
    unknown = cell["unknown_class_count"]
    # keep the stream length fixed: redistribute the unknown pool
    total_unknown = stream_doc["unknown_class_count"] * stream_doc["images_per_unknown_class"]
    stream_doc["unknown_class_count"] = unknown
    stream_doc["images_per_unknown_class"] = total_unknown // unknown
    config = StreamConfig(**stream_doc)
    agent_doc = dict(doc.get("agent", {}))
    agent_doc["detector"] = {**agent_doc.get("detector", {}),
                             "kind": DETECTOR_ALIASES[cell["detector"]]}
    if cell["learner"] == "fevm":
        agent_doc["mode"] = "towl_fevm"
        agent_doc["base"] = "towl_fevm"
    else:
        agent_doc["mode"] = "towl_lc"
        agent_doc["base"] = "towl_lc"
        agent_doc["learner"] = cell["learner"]
    agent_doc["manager"] = {**agent_doc.get("manager", {}), **cell["manager"]}
    agent_config = AgentConfig.from_json(agent_doc)
    geometry = BlobGeometry.from_json(doc.get("geometry", {}))
    seeds = doc.get("seeds")
    report = run_experiment(config, agent_config, geometry, seeds=seeds)
    report["cell"] = cell["name"]
    return report_to_json(report)


def cmd_grid(args) -> int:
    doc = _load_config(args.config)
    cells = _grid_cells(doc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    payloads = [
        json.dumps({
            "cell": cell,
            "stream": doc["stream"],
            "geometry": doc.get("geometry", {}),
            "agent": doc.get("agent", {}),
            "seeds": doc.get("grid", {}).get("seeds"),
        })
        for cell in cells
    ]
    results: dict[str, dict | None] = {}
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            futures = {cell["name"]: pool.submit(_run_cell, payload)
                       for cell, payload in zip(cells, payloads)}
            for name, fut in futures.items():
                try:
                    results[name] = json.loads(fut.result())
                except Exception as exc:  # cell failure should not kill the grid
                    log.error("cell %s failed: %s", name, exc)
                    results[name] = None
    else:
        for cell, payload in zip(cells, payloads):
            try:
                results[cell["name"]] = json.loads(_run_cell(payload))
            except Exception as exc:
                log.error("cell %s failed: %s", cell["name"], exc)
                results[cell["name"]] = None
    failed = [name for name, rep in results.items() if rep is None]
    rows = []
    for cell in cells:
        rep = results[cell["name"]]
        if rep is None:
            continue
        path = out / f"{cell['name'].replace('+', '_')}.json"
        path.write_text(json.dumps(rep, sort_keys=True, indent=2))
        rows.append([cell["name"], cell["unknown_class_count"],
                     f"{rep['owm_mean']:.6f}", f"{rep['owm_std']:.6f}"])
    with open(out / "aggregate.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "unknown_classes", "owm_mean", "owm_std"])
        writer.writerows(rows)
    if failed:
        print("failed cells: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def _report_scores(path: Path) -> dict[str, list[float]]:
    if path.is_dir():
        out = {}
        for p in sorted(path.glob("*.json")):
            doc = json.loads(p.read_text())
            if "owm_per_run" in doc:
                out[p.stem] = doc["owm_per_run"]
        return out
    doc = json.loads(path.read_text())
    return {path.stem: doc["owm_per_run"]}


def cmd_compare(args) -> int:
    a = _report_scores(Path(args.report_a))
    b = _report_scores(Path(args.report_b))
    shared = sorted(set(a) & set(b)) or None
    pairs = shared if shared else list(zip(sorted(a), sorted(b)))
    rows = []
    if shared:
        for name in shared:
            rows.append((name, a[name], b[name]))
    else:
        for na, nb in pairs:
            rows.append((f"{na} vs {nb}", a[na], b[nb]))
    for name, sa, sb in rows:
        result = paired_comparison(sa, sb)
        flag = " (degenerate)" if result.degenerate else ""
        print(f"{name}: t={result.statistic:.6f} p={result.p_value:.6f}{flag}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="owlearn",
        description="Open-world learning without labels over feature streams",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write synthetic feature files")
    synth.add_argument("--config", required=True)
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--out", required=True)
    synth.set_defaults(func=cmd_synth)

    cal = sub.add_parser("calibrate", help="detector threshold and quality gate")
    cal.add_argument("--config", required=True)
    cal.add_argument("--seed", type=int, default=None)
    cal.add_argument("--out", default=None)
    _add_agent_flags(cal)
    cal.set_defaults(func=cmd_calibrate)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    _add_agent_flags(run)
    run.set_defaults(func=cmd_run)

    grid = sub.add_parser("grid", help="run an experiment grid")
    grid.add_argument("--config", required=True)
    grid.add_argument("--out", required=True)
    grid.add_argument("--parallel", type=int, default=1)
    grid.set_defaults(func=cmd_grid)

    cmp_ = sub.add_parser("compare", help="paired t-tests between report sets")
    cmp_.add_argument("report_a")
    cmp_.add_argument("report_b")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def _add_agent_flags(sub) -> None:
    sub.add_argument("--partition-mode", choices=("fp", "sp"), default=None)
    sub.add_argument("--gate", choices=("on", "off", "labels"), default=None)
    sub.add_argument("--detector", choices=tuple(DETECTOR_ALIASES), default=None)
    sub.add_argument("--learner", choices=LEARNER_CHOICES, default=None)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
