"""ODE-block classifier for the two-dimensional point cloud.

h(0) = x (optionally zero-padded with ``augment`` extra channels), m(0) = 0
or a trainable vector; the state at t = 1 goes through a dense layer giving
two logits scored by cross-entropy. Gradients of the head come from the
tape, everything upstream from the adjoint solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tape
from ..optim import OptimizerState, optimizer_step
from .models import DampingParams, OdeModel, OdeState, SolveOptions, mlp_field



@dataclass
class StepReport:
    loss: float
    accuracy: float
    forward_nfe: int
    backward_nfe: int
    adjoint_trace: list = field(default_factory=list)


@dataclass
class PointCloudClassifier:
    family: str
    seed: int = 0
    hidden: int = 20
    t1: float = 1.0
    opts: SolveOptions = field(default_factory=SolveOptions)
    omega0: float = -3.0
    eps_cap: float = 1.0
    act: str = "identity"
    augment: int = 0
    trainable_m0: bool = False
    adjoint_clip: float | None = None

    def __post_init__(self):
        if self.augment < 0:
            raise ValueError("augment must be >= 0")
        if self.trainable_m0 and self.family == "node":
            raise ValueError("a trainable initial momentum needs a momentum family")
        rng = np.random.default_rng(self.seed)
        width = 2 + self.augment
        self.model = OdeModel(self.family, mlp_field([width, self.hidden, self.hidden, width], rng),
                              DampingParams(omega=self.omega0, eps_cap=self.eps_cap), act=self.act)
        bound = 1.0 / np.sqrt(width)
        self.head = {"Wh": rng.uniform(-bound, bound, size=(2, width)), "bh": np.zeros(2)}
        if self.trainable_m0:
            self.head["m0"] = np.zeros(width)

    @property
    def params(self) -> dict[str, np.ndarray]:
        p = dict(self.model.f.params)
        p.update(self.head)
        if self.family != "node":
            p["omega"] = np.asarray(self.model.damping.omega)
        if self.family == "ghbnode":
            p["chi"] = np.asarray(self.model.damping.chi)
        return p

    def set_params(self, p) -> None:
        for k in self.model.f.params:
            self.model.f.params[k] = np.asarray(p[k], dtype=np.float64)
        for k in self.head:
            self.head[k] = np.asarray(p[k], dtype=np.float64)
        if "omega" in p:
            self.model.damping.omega = float(p["omega"])
        if "chi" in p:
            self.model.damping.chi = float(p["chi"])

    def n_params(self) -> int:
        return int(sum(np.size(v) for k, v in self.params.items() if k not in ("omega", "chi")))

    def _initial(self, x) -> OdeState:
        x = np.asarray(x, dtype=np.float64)
        if self.augment:
            x = np.concatenate([x, np.zeros((x.shape[0], self.augment))], axis=1)
        if self.family == "node":
            return OdeState(x)
        m0 = np.broadcast_to(self.head["m0"], x.shape).copy() if self.trainable_m0 else np.zeros_like(x)
        return OdeState(x, m0)

    def _head_loss(self, hT, labels):
        tape = Tape()
        hp = {k: tape.param(k, self.head[k]) for k in ("Wh", "bh")}
        h = tape.leaf(hT)
        logits = ad.add(ad.matmul(h, ad.transpose(hp["Wh"])), hp["bh"])
        loss = ad.cross_entropy_loss(logits, labels)
        g = ad.backward(tape, loss)
        acc = float(np.mean(np.argmax(logits.data, axis=-1) == labels))
        return loss.item(), acc, g.of(h), {k: g[k] for k in hp}

    def evaluate(self, x, labels) -> tuple[float, float]:
        """(loss, accuracy) without gradients."""
        final, _ = self.model.forward(self._initial(x), 0.0, self.t1, self.opts)
        loss, acc, _, _ = self._head_loss(final.h, np.asarray(labels))
        return loss, acc

    def loss(self, x, labels) -> float:
        return self.evaluate(x, labels)[0]

    def gradients(self, x, labels, checkpoints=()) -> tuple[dict[str, np.ndarray], StepReport]:
        labels = np.asarray(labels)
        self.model.f.nfe = 0
        final, fst = self.model.forward(self._initial(x), 0.0, self.t1, self.opts)
        loss, acc, dh, head_grads = self._head_loss(final.h, labels)
        res = self.model.adjoint(final, dh, 0.0, self.t1, self.opts, checkpoints=checkpoints,
                                 adjoint_clip=self.adjoint_clip)
        grads = {k: res.grads[k] for k in self.model.f.params}
        grads.update(head_grads)
        if self.trainable_m0:
            grads["m0"] = res.dL_dm0.sum(axis=0)
        if self.family != "node":
            grads["omega"] = res.grads["omega"]
        if self.family == "ghbnode":
            grads["chi"] = res.grads["chi"]
        return grads, StepReport(loss, acc, fst.forward_nfe, res.stats.backward_nfe, res.trace)

    def train_step(self, x, labels, opt: OptimizerState, checkpoints=()) -> StepReport:
        grads, report = self.gradients(x, labels, checkpoints)
        self.set_params(optimizer_step(opt, self.params, grads))
        return report
