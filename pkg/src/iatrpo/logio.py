"""Structured run outputs: per-iteration metrics CSV and line-delimited
episode logs. Every artifact embeds (format version, config hash, seed) in
its first line, and all numbers are written with shortest-roundtrip
formatting so reruns produce identical bytes.
"""

from __future__ import annotations

import json

from .evalr import EpisodeTrace

FORMAT_VERSION = 1

METRICS_HEADER = ["iteration", "agent", "mean_episode_length", "success_probe",
                  "joint_success_probe", "kl", "improvement", "backtracks",
                  "accepted", "value_mse"]


def _fmt(value) -> str:
    if value is None or value == "":
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def artifact_preamble(config_hash: str, seed) -> str:
    return f"# format_version={FORMAT_VERSION} config_hash={config_hash} seed={seed}"


class MetricsWriter:
    """Streaming CSV sink with a stable header; one writer per file."""

    def __init__(self, fh, config_hash: str = "", seed=None):
        self.fh = fh
        fh.write(artifact_preamble(config_hash, seed) + "\n")
        fh.write(",".join(METRICS_HEADER) + "\n")

    def write_row(self, row: dict):
        self.fh.write(",".join(_fmt(row.get(k, "")) for k in METRICS_HEADER) + "\n")

    def flush(self):
        self.fh.flush()


def emit_metrics(rows, fh, config_hash: str = "", seed=None):
    """Write all rows at once through a MetricsWriter."""
    writer = MetricsWriter(fh, config_hash, seed)
    for row in rows:
        writer.write_row(row)
    writer.flush()


def read_metrics(path) -> list[dict]:
    """Read a metrics CSV back into typed rows (blank probe fields stay '')."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = None
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                continue
            parts = line.split(",")
            row = dict(zip(header, parts))
            for key in ("iteration", "agent", "backtracks", "accepted"):
                if row.get(key, "") != "":
                    row[key] = int(row[key])
            for key in ("mean_episode_length", "success_probe",
                        "joint_success_probe", "kl", "improvement", "value_mse"):
                if row.get(key, "") != "":
                    row[key] = float(row[key])
            rows.append(row)
    return rows


def log_episode(trace: EpisodeTrace, fh):
    """Append one episode to a line-delimited log: an episode record followed
    by one record per step (requires a trace captured with step records)."""
    fh.write(json.dumps({
        "type": "episode",
        "episode": trace.episode,
        "seed": trace.seed,
        "env_id": trace.env_id,
        "goals": [[float(g[0]), float(g[1])] for g in trace.goals],
        "outcomes": trace.outcomes,
        "first_arrival": trace.first_arrival,
        "length": max((len(p) - 1) for p in trace.positions),
    }, sort_keys=True) + "\n")
    for rec in trace.steps:
        fh.write(json.dumps({"type": "step", "episode": trace.episode, **rec},
                            sort_keys=True) + "\n")


def write_episode_log(traces, fh, config_hash: str = "", seed=None, env_id: str = ""):
    fh.write(json.dumps({
        "type": "header", "format_version": FORMAT_VERSION,
        "config_hash": config_hash, "seed": seed, "env_id": env_id,
    }, sort_keys=True) + "\n")
    for trace in traces:
        log_episode(trace, fh)


def read_episode_log(path) -> tuple[dict, list[dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or lines[0].get("type") != "header":
        raise ValueError(f"{path}: missing episode-log header")
    return lines[0], lines[1:]
