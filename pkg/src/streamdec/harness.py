"""Accuracy-latency sweeps and the forced-vs-buffered comparison harness.

The sweep runs every (model, strategy) cell over the same utterance list, so
mean-output-time deltas between rows are directly comparable: the timing of
the input stream itself contributes identically to both sides and cancels in
the difference.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .core import CommitLog, ConfigError, Utterance
from .decoder import (
    BUFFERED_STATE,
    FORCED_REDECODE,
    BeamConfig,
    Session,
    run_session,
    step_chunk,
)
from .metrics import (
    LatencyReport,
    corpus_wer,
    latency_delta,
    mean_output_time,
)
from .model import SequenceModel
from .strategies import (
    HoldN,
    StrategyConfig,
    strategy_name,
    strategy_params,
)

CSV_HEADER = "model,strategy,params,wer,mean_t_out,delta_latency"


def eval_tokens(utt: Utterance) -> tuple[str, ...]:
    """Scoring reference: the target side when the task has one."""
    if utt.target_tokens is not None:
        return tuple(utt.target_tokens)
    return tuple(utt.reference_tokens)


@dataclass(frozen=True)
class SweepSpec:
    strategies: tuple[StrategyConfig, ...]
    chunk_len_sec: float = 0.5
    beam: BeamConfig = field(default_factory=BeamConfig)
    mode: str = FORCED_REDECODE
    workers: int = 1

    def __post_init__(self) -> None:
        if not self.strategies:
            raise ConfigError("sweep needs at least one strategy")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass(frozen=True)
class TradeoffRow:
    model: str
    strategy: str
    params: str
    wer: float
    mean_t_out: float
    delta_latency: float

    def csv(self) -> str:
        return ",".join(
            (
                self.model,
                self.strategy,
                self.params,
                f"{self.wer:.4f}",
                f"{self.mean_t_out:.4f}",
                f"{self.delta_latency:.4f}",
            )
        )


def _run_cell(
    model: SequenceModel,
    utts: Sequence[Utterance],
    strategy: StrategyConfig,
    chunk_len_sec: float,
    beam: BeamConfig,
    mode: str,
) -> tuple[float, LatencyReport]:
    logs: dict[str, CommitLog] = {}
    pairs = []
    for u in utts:
        log = run_session(model, u, strategy, chunk_len_sec, beam, mode)
        logs[u.id] = log
        pairs.append((eval_tokens(u), log.tokens))
    return corpus_wer(pairs).rate, mean_output_time(logs)


def _cell_job(args):
    name, model, utts, strategy, chunk_len_sec, beam, mode = args
    try:
        wer_rate, report = _run_cell(
            model, utts, strategy, chunk_len_sec, beam, mode
        )
        return name, strategy, wer_rate, report, None
    except Exception as e:  # failed cells become nan rows, not a dead sweep
        return name, strategy, float("nan"), None, repr(e)


def sweep(
    models: Mapping[str, SequenceModel],
    utts: Sequence[Utterance],
    spec: SweepSpec,
) -> list[TradeoffRow]:
    """One TradeoffRow per (model, strategy).

    The latency baseline is the first model's hold-0 cell (computed even when
    hold-0 is not among the requested strategies; it only becomes a row when
    requested). Rows are ordered by latency delta, then model and strategy
    labels; failed cells carry nan metrics and sort last.
    """
    if not models:
        raise ConfigError("sweep needs at least one model")
    if not utts:
        raise ConfigError("sweep needs at least one utterance")
    names = list(models)
    jobs = []
    requested = set()
    for name in names:
        for strat in spec.strategies:
            jobs.append(
                (name, models[name], utts, strat, spec.chunk_len_sec, spec.beam, spec.mode)
            )
            requested.add((name, strat))
    baseline_key = (names[0], HoldN(0))
    if baseline_key not in requested:
        jobs.append(
            (names[0], models[names[0]], utts, HoldN(0), spec.chunk_len_sec, spec.beam, spec.mode)
        )

    if spec.workers > 1:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_cell_job, jobs))
    else:
        results = [_cell_job(j) for j in jobs]

    by_key = {(name, strat): (w, rep, err) for name, strat, w, rep, err in results}
    base_report = by_key[baseline_key][1]
    rows = []
    for name in names:
        for strat in spec.strategies:
            wer_rate, report, err = by_key[(name, strat)]
            if report is None or base_report is None:
                delta = float("nan")
            else:
                delta = latency_delta(report, base_report)
            rows.append(
                TradeoffRow(
                    model=name,
                    strategy=strategy_name(strat),
                    params=strategy_params(strat),
                    wer=wer_rate,
                    mean_t_out=report.mean_output_time_sec if report else float("nan"),
                    delta_latency=delta,
                )
            )

    def order(r: TradeoffRow):
        bad = r.delta_latency != r.delta_latency  # nan check
        return (bad, r.delta_latency if not bad else 0.0, r.model, r.strategy, r.params)

    rows.sort(key=order)
    return rows


def rows_to_csv(rows: Sequence[TradeoffRow]) -> str:
    return "\n".join([CSV_HEADER, *(r.csv() for r in rows)]) + "\n"


def save_sweep_csv(rows: Sequence[TradeoffRow], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(rows_to_csv(rows))


@dataclass(frozen=True)
class Divergence:
    utt_id: str
    chunk_index: int
    field_name: str
    forced: tuple
    buffered: tuple


@dataclass(frozen=True)
class ModeComparison:
    equal: bool
    divergence: Divergence | None
    utterances: int
    chunks: int
    forced_wall_sec: float
    buffered_wall_sec: float
    forced_positions_encoded: int
    buffered_positions_encoded: int


def compare_modes(
    model: SequenceModel,
    utts: Sequence[Utterance],
    strategy: StrategyConfig,
    chunk_len_sec: float = 0.5,
    beam: BeamConfig = BeamConfig(),
) -> ModeComparison:
    """Run each utterance through both session modes in lockstep.

    Chunk outputs (tokens and per-token log-probs) and commits are compared
    chunk by chunk; the first mismatch is reported. Wall-clock and
    encoder-position counts accumulate per mode either way.
    """
    wall = {FORCED_REDECODE: 0.0, BUFFERED_STATE: 0.0}
    pos = {FORCED_REDECODE: 0, BUFFERED_STATE: 0}
    n_chunks = 0
    first_div: Divergence | None = None
    for u in utts:
        sessions = {
            m: Session(
                model=model,
                utterance=u,
                strategy=strategy,
                chunk_len_sec=chunk_len_sec,
                beam=beam,
                mode=m,
            )
            for m in (FORCED_REDECODE, BUFFERED_STATE)
        }
        for chunk in sessions[FORCED_REDECODE].chunks():
            n_chunks += 1
            outs = {}
            commits = {}
            for m, s in sessions.items():
                t0 = time.perf_counter()
                outs[m], commits[m] = step_chunk(s, chunk)
                wall[m] += time.perf_counter() - t0
            if first_div is None:
                f, b = outs[FORCED_REDECODE], outs[BUFFERED_STATE]
                if f.tokens != b.tokens:
                    first_div = Divergence(u.id, chunk.index, "tokens", f.tokens, b.tokens)
                elif f.log_probs != b.log_probs:
                    first_div = Divergence(u.id, chunk.index, "log_probs", f.log_probs, b.log_probs)
                elif commits[FORCED_REDECODE] != commits[BUFFERED_STATE]:
                    first_div = Divergence(
                        u.id, chunk.index, "commit",
                        commits[FORCED_REDECODE], commits[BUFFERED_STATE],
                    )
        for m, s in sessions.items():
            pos[m] += s.positions_encoded
    return ModeComparison(
        equal=first_div is None,
        divergence=first_div,
        utterances=len(utts),
        chunks=n_chunks,
        forced_wall_sec=wall[FORCED_REDECODE],
        buffered_wall_sec=wall[BUFFERED_STATE],
        forced_positions_encoded=pos[FORCED_REDECODE],
        buffered_positions_encoded=pos[BUFFERED_STATE],
    )
