"""Train one configured model per seed and persist metrics and a manifest."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import __version__
from .. import autodiff as ad
from ..attention import AttnHyper
from ..autodiff import NonFiniteError
from ..cells import MomentumHyper, RecurrentModel, bptt_gradient_norms
from ..ode.classifier import PointCloudClassifier
from ..ode.models import SolveOptions
from ..ode.solvers import OdeSolverError
from ..optim import OptimizerState, clip_grad_norm, optimizer_step
from ..tasks import adding_batch, copy_rnn_batch, copy_rnn_vocab, copy_transformer_batch, gen_point_cloud
from ..transformer import CopyTransformer
from .config import ExperimentConfig, config_to_text
from .metrics import MANIFEST_FILE, METRICS_FILE, TIMING_FILE, MetricRecord, write_metrics, write_timing

# separate streams per seed so that evaluation never perturbs training
_TRAIN_STREAM, _EVAL_STREAM = 1, 2


class Diverged(RuntimeError):
    pass


@dataclass
class RunResult:
    config: ExperimentConfig
    records: list[MetricRecord] = field(default_factory=list)
    status: dict[int, str] = field(default_factory=dict)
    out_dir: Path | None = None

    @property
    def ok(self) -> bool:
        return all(v == "ok" for v in self.status.values())

    def for_seed(self, seed: int) -> list[MetricRecord]:
        return [r for r in self.records if r.seed == seed]


def run_id(cfg: ExperimentConfig) -> str:
    return f"{cfg.task}-{cfg.variant}"


def make_optimizer(cfg: ExperimentConfig) -> OptimizerState:
    return OptimizerState(cfg.optimizer, lr=cfg.lr, beta=cfg.momentum)


def _lr_at(cfg: ExperimentConfig, step: int) -> float:
    return cfg.lr_decay_to if cfg.lr_decay_at and step > cfg.lr_decay_at else cfg.lr


def _finite(value: float, step: int) -> float:
    if not math.isfinite(value):
        raise Diverged(f"non-finite loss at step {step}")
    return value


def _apply(opt, cfg, params, grads):
    if cfg.clip > 0:
        grads = clip_grad_norm(grads, cfg.clip)
    return optimizer_step(opt, params, grads)


# --------------------------------------------------------------------------
# families

Emit = Callable[[MetricRecord], None]


def _train_ode(cfg: ExperimentConfig, seed: int, emit: Emit) -> None:
    clf = PointCloudClassifier(cfg.variant, seed, hidden=cfg.hidden, t1=cfg.t_end,
                               opts=SolveOptions(cfg.solver, cfg.rtol, cfg.atol),
                               omega0=cfg.omega, eps_cap=cfg.eps_cap, act=cfg.momentum_act,
                               augment=cfg.augment, trainable_m0=cfg.m0 == "trainable",
                               adjoint_clip=cfg.adjoint_clip or None)
    clf.model.damping.chi = cfg.chi
    cloud = gen_point_cloud(seed)
    rng = np.random.default_rng([seed, _TRAIN_STREAM])
    opt = make_optimizer(cfg)
    n = cloud.points.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = _lr_at(cfg, epoch)
        perm = rng.permutation(n)
        losses, fwd, bwd = [], [], []
        trace = []
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            rep = clf.train_step(cloud.points[idx], cloud.labels[idx], opt, cfg.adjoint_checkpoints)
            losses.append(_finite(rep.loss, epoch))
            fwd.append(rep.forward_nfe)
            bwd.append(rep.backward_nfe)
            trace = rep.adjoint_trace
        rec = MetricRecord(run_id(cfg), cfg.task, cfg.variant, seed, epoch, float(np.mean(losses)),
                           forward_nfe=float(np.mean(fwd)), backward_nfe=float(np.mean(bwd)))
        if cfg.adjoint_checkpoints:
            rec.adjoint_norms = [float(v) for _, v in trace]
        if cfg.eval_every and epoch % cfg.eval_every == 0:
            rec.eval_loss, rec.eval_acc = clf.evaluate(cloud.points, cloud.labels)
        emit(rec)


def _rnn_model(cfg: ExperimentConfig) -> RecurrentModel:
    hyper = MomentumHyper(cfg.mu, cfg.s, cfg.schedule, cfg.restart or None, cfg.parameterization,
                          cfg.cell_beta, cfg.cell_eps)
    if cfg.task == "adding":
        return RecurrentModel(cfg.variant, 2, cfg.hidden, 1, hyper, cfg.activation, "last", cfg.forget_gate)
    vocab = copy_rnn_vocab(cfg.n_symbols)
    return RecurrentModel(cfg.variant, vocab, cfg.hidden, vocab, hyper, cfg.activation, "sequence",
                          cfg.forget_gate)


def _rnn_batch(cfg, rng):
    if cfg.task == "adding":
        return adding_batch(rng, cfg.batch_size, cfg.seq_len)
    return copy_rnn_batch(rng, cfg.batch_size, cfg.t_blank, cfg.n_symbols, cfg.copy_len, cfg.full_loss)


def _rnn_loss(cfg, batch) -> Callable:
    if cfg.task == "adding":
        targets = batch[1]
        return lambda outputs: ad.mse_loss(outputs[0], targets)
    _, targets, mask = batch

    def loss(outputs):
        logits = ad.concat([ad.reshape(o, (o.shape[0], 1, o.shape[1])) for o in outputs], axis=1)
        return ad.cross_entropy_loss(logits, targets, mask.astype(np.float64))

    return loss


def _rnn_eval(model, params, cfg, batch) -> tuple[float, float]:
    outputs, _ = model.run({k: ad.Tensor(v) for k, v in params.items()}, batch[0])
    loss = _rnn_loss(cfg, batch)(outputs).item()
    if cfg.task == "adding":
        return loss, math.nan
    pred = np.stack([np.argmax(o.data, axis=-1) for o in outputs], axis=1)
    _, targets, mask = batch
    return loss, float(((pred == targets) & mask).sum() / mask.sum())


def _train_rnn(cfg: ExperimentConfig, seed: int, emit: Emit) -> None:
    model = _rnn_model(cfg)
    params = model.init_params(np.random.default_rng(seed))
    rng = np.random.default_rng([seed, _TRAIN_STREAM])
    eval_batch = _rnn_batch(cfg, np.random.default_rng([seed, _EVAL_STREAM]))
    opt = make_optimizer(cfg)
    record_at = set(cfg.grad_norm_at)
    for step in range(1, cfg.iterations + 1):
        opt.lr = _lr_at(cfg, step)
        batch = _rnn_batch(cfg, rng)
        norms, grads, loss = bptt_gradient_norms(model, params, batch[0], _rnn_loss(cfg, batch))
        rec = MetricRecord(run_id(cfg), cfg.task, cfg.variant, seed, step, _finite(loss, step))
        if step in record_at:
            rec.grad_norms = norms
        params = _apply(opt, cfg, params, dict(grads))
        if cfg.eval_every and step % cfg.eval_every == 0:
            rec.eval_loss, rec.eval_acc = _rnn_eval(model, params, cfg, eval_batch)
        emit(rec)


def _transformer(cfg: ExperimentConfig) -> CopyTransformer:
    hyper = AttnHyper(cfg.attn_gamma, cfg.attn_beta, cfg.beta_conn, cfg.variant == "adaptive", cfg.delta)
    return CopyTransformer(cfg.variant, vocab=cfg.n_symbols + 1, d_model=cfg.d_model, n_heads=cfg.n_heads,
                           n_layers=cfg.n_layers, d_ff=cfg.d_ff, max_len=cfg.max_len, hyper=hyper)


def _train_transformer(cfg: ExperimentConfig, seed: int, emit: Emit) -> None:
    model = _transformer(cfg)
    params = model.init_params(np.random.default_rng(seed))
    rng = np.random.default_rng([seed, _TRAIN_STREAM])
    eval_batch = copy_transformer_batch(np.random.default_rng([seed, _EVAL_STREAM]), cfg.batch_size,
                                        cfg.max_len, cfg.n_symbols)
    opt = make_optimizer(cfg)
    for step in range(1, cfg.iterations + 1):
        opt.lr = _lr_at(cfg, step)
        tokens, targets, mask = copy_transformer_batch(rng, cfg.batch_size, cfg.max_len, cfg.n_symbols)
        beta_used = model.beta_conn
        loss, grads, _ = model.gradients(params, tokens, targets, mask)
        rec = MetricRecord(run_id(cfg), cfg.task, cfg.variant, seed, step, _finite(loss, step),
                           beta_conn=float(beta_used))
        model.update_adaptive(grads)
        params = _apply(opt, cfg, params, grads)
        if cfg.eval_every and step % cfg.eval_every == 0:
            p = {k: ad.Tensor(v) for k, v in params.items()}
            tok, tgt, msk = eval_batch
            logits = model.logits(p, tok)
            rec.eval_loss = ad.cross_entropy_loss(logits, tgt, msk.astype(np.float64)).item()
            rec.eval_acc = float(((np.argmax(logits.data, axis=-1) == tgt) & msk).sum() / msk.sum())
        emit(rec)


TRAINERS = {"ode": _train_ode, "rnn": _train_rnn, "transformer": _train_transformer}


# --------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> RunResult:
    """Train every seed in ``cfg.seeds``; write manifest, metrics and timings.

    A non-finite loss halts that seed only; its records up to that point are
    kept and its status is recorded in the manifest.
    """
    cfg.validate()
    result = RunResult(cfg)
    out = Path(cfg.out_dir)
    if write:
        out.mkdir(parents=True, exist_ok=True)
        result.out_dir = out
        (out / MANIFEST_FILE).write_text(config_to_text(cfg, {"code_version": __version__}))
    timings: list[tuple[int, int, float]] = []
    for seed in cfg.seeds:
        start = time.perf_counter()

        def emit(rec, seed=seed, start=start):
            result.records.append(rec)
            timings.append((seed, rec.step, time.perf_counter() - start))

        try:
            TRAINERS[cfg.family](cfg, seed, emit)
            result.status[seed] = "ok"
        except (Diverged, NonFiniteError, OdeSolverError, FloatingPointError) as exc:
            result.status[seed] = f"diverged: {exc}"
    if write:
        write_metrics(out / METRICS_FILE, result.records, cfg.family)
        write_timing(out / TIMING_FILE, timings)
        extra = {"code_version": __version__}
        extra.update({f"status.seed{s}": v for s, v in result.status.items()})
        (out / MANIFEST_FILE).write_text(config_to_text(cfg, extra))
    return result
