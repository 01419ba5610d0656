"""
Alternating optimization of the transport plan, the sampling shift and the
encoder, plus one-pass inference.

One epoch: encode -> build costs -> proximal OT solve (warm started) ->
closed-form shift -> `inner_steps` Adam updates of the encoder.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .config import TrainConfig
from .encoder import (
    EmbeddingPair,
    EncoderParams,
    adam_step,
    cost_matrices,
    embed_pair,
    init_encoder,
    loss_and_grad,
    mean_pairwise_distance,
)
from .errors import DivergenceError, LambdaUndefinedError, ShapeError
from .evaluation import alignment_metrics, compute_ranks
from .graph import AnchorSet, Graph
from .log import log_event, ms_since
from .ot import (
    CostSet,
    SamplingShift,
    TransportPlan,
    fgw_objective,
    proximal_fgw,
    uniform_plan,
)
from .rwr import FeatureMatrix, build_features

logger = logging.getLogger(__name__)

MONOTONE_SLACK = 1e-6


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    objective_ot: float
    lam: float
    objective_enc: float
    seconds: float
    mean_distance: float
    mrr: float | None = None
    hits1: float | None = None
    hits10: float | None = None


@dataclass
class TrainHistory:
    initial_objective: float = 0.0
    records: list[EpochRecord] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    # proximal objective trace, filled when cfg.trace is set
    trace: list[float] = field(default_factory=list)
    # plan the last epoch's proximal solve started from
    last_warm_start: TransportPlan | None = None

    @property
    def objectives(self) -> list[float]:
        return [r.objective_enc for r in self.records]

    @property
    def lambdas(self) -> list[float]:
        return [r.lam for r in self.records]


def _within(current: float, previous: float, rel: float = MONOTONE_SLACK) -> bool:
    return current <= previous + rel * max(1.0, abs(previous))


def lambda_closed_form(costs: CostSet, S: TransportPlan, alpha: float) -> float:
    """Shift minimising J for fixed plan and costs: ((1-a) K1 + a K2) / (2 a K3).

    K1 = sum M, K3 = sum over edge pairs of |C1 - C2|^2, and
    K2 = sum over edge pairs of |C1 - C2|^2 (S(x,y) + S(x',y')),
    each reduced to row / column sums so nothing loops over quadruples.
    """
    if alpha <= 0.0:
        raise LambdaUndefinedError("alpha = 0 leaves the shift unconstrained")
    n1, n2 = costs.shape
    if S.shape != (n1, n2):
        raise ShapeError(f"plan {S.shape} does not match costs {costs.shape}")
    c1, c2 = sp.csr_array(costs.C1), sp.csr_array(costs.C2)
    c1sq, c2sq = c1.power(2), c2.power(2)
    k1 = float(costs.M.sum())
    k3 = n2 * n2 * float(c1sq.sum()) + n1 * n1 * float(c2sq.sum())
    k3 -= 2.0 * float(c1.sum()) * float(c2.sum())
    if k3 <= 0.0:
        raise LambdaUndefinedError("K3 vanishes: the two cost structures coincide")

    s = S.values
    p1 = s.sum(axis=1)
    p2 = s.sum(axis=0)

    def _half(axis: int) -> float:
        # sum over (x', y') of d * S(x, y) when axis=1, of d * S(x', y') when axis=0
        a1 = np.asarray(c1sq.sum(axis=axis)).ravel()
        a2 = np.asarray(c2sq.sum(axis=axis)).ravel()
        r1 = np.asarray(c1.sum(axis=axis)).ravel()
        r2 = np.asarray(c2.sum(axis=axis)).ravel()
        return float(n2 * a1 @ p1 + n1 * a2 @ p2 - 2.0 * r1 @ s @ r2)

    k2 = _half(1) + _half(0)
    return ((1.0 - alpha) * k1 + alpha * k2) / (2.0 * alpha * k3)


def _initial_shift(cfg: TrainConfig, n1: int, n2: int) -> float:
    if cfg.mode == "collapse":
        return 0.0
    if cfg.fixed_lambda is not None:
        return float(cfg.fixed_lambda)
    return 1.0 / (n1 * n2)


def _shift_is_learned(cfg: TrainConfig) -> bool:
    return cfg.mode != "collapse" and cfg.fixed_lambda is None


def features_for(
    cfg: TrainConfig, g1: Graph, g2: Graph, anchors: AnchorSet
) -> tuple[FeatureMatrix, FeatureMatrix]:
    return build_features(
        g1, g2, anchors, cfg.beta, cfg.rwr_tol, cfg.rwr_max_iter, threads=cfg.threads
    )


def embeddings_for(
    params: EncoderParams, F1: FeatureMatrix, F2: FeatureMatrix, cfg: TrainConfig
) -> EmbeddingPair:
    if cfg.mode == "fixed-cost":
        return EmbeddingPair(F1.values, F2.values)
    return embed_pair(params, F1, F2)


def _induced(g: Graph, idx: np.ndarray) -> Graph:
    sub = sp.csr_array(g.adjacency[idx][:, idx])
    sub.sort_indices()
    return Graph(sub)


def _encoder_steps(
    params: EncoderParams,
    F1: FeatureMatrix,
    F2: FeatureMatrix,
    g1: Graph,
    g2: Graph,
    plan: TransportPlan,
    shift: SamplingShift,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> EncoderParams:
    for _ in range(cfg.inner_steps):
        if cfg.batch_size is None:
            _, grads = loss_and_grad(params, F1, F2, g1, g2, plan, shift, cfg.alpha)
        else:
            i1 = np.sort(rng.choice(g1.n, size=min(cfg.batch_size, g1.n), replace=False))
            i2 = np.sort(rng.choice(g2.n, size=min(cfg.batch_size, g2.n), replace=False))
            sub = TransportPlan(plan.values[np.ix_(i1, i2)], plan.mu1[i1], plan.mu2[i2])
            _, grads = loss_and_grad(
                params,
                F1.values[i1],
                F2.values[i2],
                _induced(g1, i1),
                _induced(g2, i2),
                sub,
                shift,
                cfg.alpha,
            )
        params = adam_step(params, grads, lr=cfg.lr)
    return params


def train(
    cfg: TrainConfig,
    g1: Graph,
    g2: Graph,
    anchors: AnchorSet,
    test: AnchorSet | None = None,
    features: tuple[FeatureMatrix, FeatureMatrix] | None = None,
) -> tuple[TransportPlan, EncoderParams, TrainHistory]:
    """Run `cfg.epochs` alternating iterations from the uniform product plan.

    `anchors` are the train anchors feeding the RWR features; `test`, when
    given, is ranked against every epoch's plan for monitoring only. Prebuilt
    `features` skip the RWR stage.
    """
    t_start = time.perf_counter()
    seeds = cfg.seeds
    F1, F2 = features or features_for(cfg, g1, g2, anchors)
    params = init_encoder(F1.width, cfg.hidden, cfg.hidden, seed=seeds.init)
    rng = np.random.default_rng(seeds.batch)
    plan = uniform_plan(g1.n, g2.n)
    shift = SamplingShift(_initial_shift(cfg, g1.n, g2.n))
    history = TrainHistory()
    trace = history.trace if cfg.trace else None

    emb = embeddings_for(params, F1, F2, cfg)
    costs = cost_matrices(emb, g1, g2)
    history.initial_objective = fgw_objective(costs, plan, shift, cfg.alpha)
    previous = history.initial_objective
    log_event(
        logger,
        "train_start",
        mode=cfg.mode,
        n1=g1.n,
        n2=g2.n,
        width=F1.width,
        lam=shift.lam,
        objective=previous,
    )

    solved_with = shift
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        history.last_warm_start, solved_with = plan, shift
        plan = proximal_fgw(
            costs,
            shift,
            cfg.alpha,
            cfg.gamma_p,
            plan,
            T=cfg.prox_iters,
            N=cfg.sinkhorn_iters,
            tol=cfg.tol,
            strict=cfg.strict,
            trace=trace,
        )
        objective_ot = fgw_objective(costs, plan, shift, cfg.alpha)

        if _shift_is_learned(cfg):
            try:
                shift = SamplingShift(lambda_closed_form(costs, plan, cfg.alpha))
            except LambdaUndefinedError as e:
                history.warnings.append(f"epoch {epoch}: shift kept at {shift.lam!r} ({e})")
                log_event(logger, "shift_kept", logging.WARNING, epoch=epoch, reason=str(e))

        if cfg.mode != "fixed-cost":
            params = _encoder_steps(params, F1, F2, g1, g2, plan, shift, cfg, rng)
            emb = embed_pair(params, F1, F2)
            costs = cost_matrices(emb, g1, g2)
        objective_enc = fgw_objective(costs, plan, shift, cfg.alpha)

        if not _within(objective_enc, previous):
            msg = f"epoch {epoch}: objective rose from {previous!r} to {objective_enc!r}"
            history.warnings.append(msg)
            log_event(
                logger,
                "objective_increase",
                logging.WARNING,
                epoch=epoch,
                previous=previous,
                current=objective_enc,
            )
        previous = objective_enc

        mrr = hits1 = hits10 = None
        if test is not None and len(test):
            metrics = alignment_metrics(compute_ranks(plan, test), ks=(1, 10))
            mrr, hits1, hits10 = metrics.mrr, metrics.hits[1], metrics.hits[10]
        record = EpochRecord(
            epoch=epoch,
            objective_ot=objective_ot,
            lam=shift.lam,
            objective_enc=objective_enc,
            seconds=time.perf_counter() - t0,
            mean_distance=mean_pairwise_distance(emb),
            mrr=mrr,
            hits1=hits1,
            hits10=hits10,
        )
        history.records.append(record)
        log_event(
            logger,
            "epoch_done",
            epoch=epoch,
            objective=objective_enc,
            lam=shift.lam,
            mrr=mrr,
            ms=ms_since(t0),
        )

    if not math.isfinite(previous) or not _within(previous, history.initial_objective):
        raise DivergenceError(
            "final objective exceeds the initial one", history.initial_objective, previous
        )
    params = replace(params, lam=solved_with.lam)
    log_event(logger, "train_done", epochs=cfg.epochs, objective=previous, ms=ms_since(t_start))
    return plan, params, history


def infer(
    params: EncoderParams,
    cfg: TrainConfig,
    g1: Graph,
    g2: Graph,
    anchors: AnchorSet,
    shift: SamplingShift | None = None,
    warm_start: TransportPlan | None = None,
) -> TransportPlan:
    """One forward pass per graph and one proximal solve; params are untouched.

    The shift defaults to the one stored with `params` by `train`, falling back
    to the initial shift for params that never went through training.
    """
    t0 = time.perf_counter()
    F1, F2 = features_for(cfg, g1, g2, anchors)
    costs = cost_matrices(embeddings_for(params, F1, F2, cfg), g1, g2)
    if shift is None:
        lam = params.lam if params.lam is not None else _initial_shift(cfg, g1.n, g2.n)
        shift = SamplingShift(lam)
    plan = proximal_fgw(
        costs,
        shift,
        cfg.alpha,
        cfg.gamma_p,
        warm_start if warm_start is not None else uniform_plan(g1.n, g2.n),
        T=cfg.prox_iters,
        N=cfg.sinkhorn_iters,
        tol=cfg.tol,
        strict=cfg.strict,
    )
    log_event(logger, "infer_done", n1=g1.n, n2=g2.n, lam=shift.lam, ms=ms_since(t0))
    return plan


HISTORY_COLUMNS = (
    "epoch",
    "objective_ot",
    "lam",
    "objective_enc",
    "seconds",
    "mean_distance",
    "mrr",
    "hits1",
    "hits10",
)


def write_history(history: TrainHistory, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for r in history.records:
            w.writerow(
                ["" if (v := getattr(r, c)) is None else repr(v) for c in HISTORY_COLUMNS]
            )
