"""File formats: JSONL utterances and commit logs, JSON eval summaries,
TSV attention grids.

Utterance lines carry frames as nested lists; fine for desk-scale data and
keeps the corpus diffable and python-free to inspect.
"""

from __future__ import annotations

import json
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import CommitLog, ConfigError, Utterance


def save_utterances(utts: Iterable[Utterance], path: str) -> None:
    with open(path, "w") as fh:
        for u in utts:
            rec = {
                "id": u.id,
                "frames": u.frames.tolist(),
                "ref": list(u.reference_tokens),
                "frame_period_sec": u.frame_period_sec,
            }
            if u.target_tokens is not None:
                rec["tgt"] = list(u.target_tokens)
            fh.write(json.dumps(rec) + "\n")


def load_utterances(path: str) -> list[Utterance]:
    out = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}:{line_no}: bad JSON: {e}") from e
            tgt = rec.get("tgt")
            out.append(
                Utterance(
                    id=rec["id"],
                    frames=np.asarray(rec["frames"], dtype=np.float64),
                    reference_tokens=tuple(rec["ref"]),
                    target_tokens=tuple(tgt) if tgt is not None else None,
                    frame_period_sec=rec.get("frame_period_sec", 0.010),
                )
            )
    return out


def save_commit_logs(logs: Mapping[str, CommitLog], path: str) -> None:
    """One line per committed token, in commit order within each utterance."""
    with open(path, "w") as fh:
        for utt_id in sorted(logs):
            for t in logs[utt_id].entries:
                rec = {
                    "utt": utt_id,
                    "token": t.token,
                    "chunk": t.chunk_index,
                    "t_out": t.output_time_sec,
                }
                fh.write(json.dumps(rec) + "\n")


def load_commit_logs(path: str) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out.setdefault(rec["utt"], []).append(rec)
    return out


def save_eval_summary(summary: Mapping[str, object], path: str) -> None:
    with open(path, "w") as fh:
        json.dump(dict(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_attention_grids(
    grids: Mapping[str, np.ndarray], path: str
) -> None:
    """TSV blocks, one per grid: a `# name rows cols` header line, then the
    rows; blocks separated by blank lines."""
    with open(path, "w") as fh:
        for name in sorted(grids):
            g = np.asarray(grids[name])
            if g.ndim != 2:
                raise ConfigError(f"attention grid {name} is not 2-D")
            fh.write(f"# {name}\t{g.shape[0]}\t{g.shape[1]}\n")
            for row in g:
                fh.write("\t".join(f"{x:.6f}" for x in row) + "\n")
            fh.write("\n")


def load_attention_grids(path: str) -> dict[str, np.ndarray]:
    grids: dict[str, np.ndarray] = {}
    with open(path) as fh:
        name = None
        rows: list[list[float]] = []
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                if name is not None:
                    grids[name] = np.asarray(rows)
                name = line[2:].split("\t")[0]
                rows = []
            elif line.strip():
                rows.append([float(x) for x in line.split("\t")])
        if name is not None:
            grids[name] = np.asarray(rows)
    return grids
