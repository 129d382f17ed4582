"""The two-party split-training protocol.

Alice holds the lower layers and the input features; Bob holds the upper
layers, the loss head and the labels. Every step runs

    CONSENT_REQ -> CONSENT_ACK -> FORWARD_ACT -> BACKWARD_GRAD -> STEP_COMMIT x2

and neither party touches its parameters until both commits have crossed the
wire. Held-out evaluation rows ride along in FORWARD_ACT on eval steps, and a
final update-free round at ``step == budget`` evaluates the trained model.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..nn.layers import ModelSpec
from ..nn.model import backward_range, forward_range
from ..nn.optim import NonFiniteError, OptimizerState, lr_at, sgd_step
from ..nn.params import ParamStore
from ..runs import Dataset, TrainConfig, TrainingRun, batches
from .wire import MsgType, WireFrame, decode_frame, encode_frame, read_frame
from .transport import TransportClosed

PHASES = ("awaiting_consent", "forward", "backward", "committed")


class ProtocolError(RuntimeError):
    def __init__(self, msg, run: TrainingRun | None = None):
        super().__init__(msg)
        self.run = run


class ProtocolDesync(ProtocolError):
    pass


class RoleMismatch(ProtocolError):
    pass


class PeerAborted(ProtocolError):
    pass


class SessionAborted(ProtocolError):
    """The transport failed mid-session."""


@dataclass(frozen=True)
class Role:
    """``name`` is alice or bob; Alice holds the first ``boundary`` parametric layers."""

    name: str
    boundary: int

    def __post_init__(self):
        if self.name not in ("alice", "bob"):
            raise ValueError(f"role must be alice or bob, got {self.name!r}")

    def cut(self, model: ModelSpec) -> int:
        """Index of the first layer Bob holds."""
        return split_index(model, self.boundary)

    def layer_names(self, model: ModelSpec) -> list[str]:
        c = self.cut(model)
        held = model.layers[:c] if self.name == "alice" else model.layers[c:]
        return [l.name for l in held if l.parametric]


def split_index(model: ModelSpec, boundary: int) -> int:
    pidx = model.parametric_indices()
    if not 1 <= boundary < len(pidx):
        raise ValueError(f"boundary must be in [1, {len(pidx) - 1}] for this model, got {boundary}")
    cut = pidx[boundary]
    if cut > model.n_trunk:
        raise ValueError("boundary would hand a head layer to Alice")
    return cut


def boundary_after(model: ModelSpec, layer: str) -> int:
    """Boundary that gives Alice every parametric layer up to and including ``layer``."""
    i = model.index(layer)
    return sum(1 for j in model.parametric_indices() if j <= i)


@dataclass
class SessionState:
    role: str
    step: int = 0
    phase: str = "awaiting_consent"
    transcript: str = hashlib.sha256(b"").hexdigest()
    commit_hashes: list[str] = field(default_factory=list)

    def advance(self, phase: str):
        i = PHASES.index(self.phase)
        if phase != PHASES[(i + 1) % len(PHASES)]:
            raise ProtocolError(f"illegal phase transition {self.phase} -> {phase}")
        self.phase = phase

    def absorb(self, raw: bytes):
        self.transcript = hashlib.sha256(bytes.fromhex(self.transcript) + raw).hexdigest()


Consent = Callable[[int], bool]


def _always(step: int) -> bool:
    return True


class _Endpoint:
    def __init__(self, role: Role, transport, model, params, config: TrainConfig, consent, on_commit, wire_dtype):
        self.role, self.transport, self.model = role, transport, model
        self.params, self.config = params, config
        self.consent = consent or _always
        self.on_commit = on_commit
        self.wire_dtype = wire_dtype
        self.state = SessionState(role.name)
        self.opt = OptimizerState.zeros(params, config.momentum, config.weight_decay)
        self.schedule = config.lr_schedule()
        self.eval_at = set(config.eval_steps())
        self.cut = role.cut(model)
        self.run = TrainingRun(budget=config.budget, seed=config.seed, config_digest=config.digest())
        self.points: list[tuple[int, float]] = []
        expected = set(role.layer_names(model))
        if set(params.segments) != expected:
            raise ValueError(f"{role.name} must hold exactly layers {sorted(expected)}, got {sorted(params.segments)}")

    def rounds(self):
        for step in range(self.config.budget + 1):
            train = step < self.config.budget
            if train or step in self.eval_at:
                yield step, train, step in self.eval_at

    def send(self, msg: MsgType, payload=None):
        frame = WireFrame(msg, self.state.step, payload,
                          self.wire_dtype if payload is not None else 0)
        raw = encode_frame(frame)
        try:
            self.transport.send(raw)
        except TransportClosed as e:
            raise SessionAborted(f"transport closed at step {self.state.step}: {e}", self.finish()) from e
        self.state.absorb(raw)

    def recv(self, *expected: MsgType) -> WireFrame:
        try:
            raw = read_frame(self.transport.recv_exact)
        except TransportClosed as e:
            raise SessionAborted(f"transport closed at step {self.state.step}: {e}", self.finish()) from e
        self.state.absorb(raw)
        frame = decode_frame(raw)
        if frame.msg_type is MsgType.ABORT:
            raise PeerAborted(f"peer aborted at step {frame.step}", self.finish())
        if frame.step != self.state.step:
            raise ProtocolDesync(
                f"{frame.msg_type.name} for step {frame.step} while at step {self.state.step}", self.finish())
        if frame.msg_type not in expected:
            if frame.msg_type is MsgType.CONSENT_REQ and self.role.name == "alice":
                raise RoleMismatch("peer sent CONSENT_REQ: both endpoints are configured as alice", self.finish())
            if frame.msg_type in (MsgType.CONSENT_ACK, MsgType.CONSENT_DENY) and self.role.name == "bob":
                raise RoleMismatch("peer answered a consent request: both endpoints are configured as bob",
                                   self.finish())
            raise ProtocolError(f"expected {[m.name for m in expected]}, got {frame.msg_type.name}", self.finish())
        return frame

    def abort(self, reason: str):
        try:
            self.send(MsgType.ABORT)
        except ProtocolError:
            pass
        self.run.aborted = reason

    def commit(self, step: int, train: bool, grads: ParamStore | None):
        self.state.advance("committed")
        if train:
            self.params, self.opt = sgd_step(self.params, grads, self.opt, lr_at(self.schedule, step))
            self.run.committed += 1
            if self.on_commit is not None:
                self.on_commit(step, self.params)
        self.state.commit_hashes.append(self.state.transcript)
        self.state.step += 1
        self.state.advance("awaiting_consent")

    def finish(self) -> TrainingRun:
        run = self.run
        out = TrainingRun(self.points, run.budget, run.seed, run.config_digest, run.committed, run.aborted)
        out.params = self.params
        out.extras = {"transcript": self.state.transcript, "commit_hashes": list(self.state.commit_hashes)}
        return out


class _Alice(_Endpoint):
    def __init__(self, *a, data: Dataset, test: Dataset, **kw):
        super().__init__(*a, **kw)
        self.x_train, self.x_test = data.x, test.x

    def loop(self) -> TrainingRun:
        order = batches(len(self.x_train), self.config.batch_size, self.config.data_seed)
        for step, train, evaluate in self.rounds():
            if not self.consent(step):
                self.send(MsgType.CONSENT_DENY)
                self.run.aborted = f"consent denied by alice at step {step}"
                return self.finish()
            self.send(MsgType.CONSENT_REQ)
            reply = self.recv(MsgType.CONSENT_ACK, MsgType.CONSENT_DENY)
            if reply.msg_type is MsgType.CONSENT_DENY:
                self.run.aborted = f"consent denied by bob at step {step}"
                return self.finish()
            self.state.advance("forward")
            parts, fwd = [], None
            if train:
                idx = next(order)
                fwd = forward_range(self.model, self.params, self.x_train[idx], 0, self.cut)
                parts.append(fwd.output)
            if evaluate:
                parts.append(forward_range(self.model, self.params, self.x_test, 0, self.cut).output)
            self.send(MsgType.FORWARD_ACT, np.concatenate(parts))
            self.state.advance("backward")
            grad = self.recv(MsgType.BACKWARD_GRAD).payload
            grads = None
            if train:
                if grad.shape != fwd.output.shape:
                    self.abort("gradient shape mismatch")
                    raise ProtocolError(f"boundary gradient {list(grad.shape)} vs activations "
                                        f"{list(fwd.output.shape)}", self.finish())
                grads, _ = backward_range(self.model, self.params, fwd,
                                          grad_out=grad.astype(fwd.output.dtype, copy=False))
            self.send(MsgType.STEP_COMMIT)
            self.recv(MsgType.STEP_COMMIT)
            self.commit(step, train, grads)
        return self.finish()


class _Bob(_Endpoint):
    def __init__(self, *a, data: Dataset, test: Dataset, **kw):
        super().__init__(*a, **kw)
        self.y_train, self.y_test = data.y, test.y

    def loop(self) -> TrainingRun:
        order = batches(len(self.y_train), self.config.batch_size, self.config.data_seed)
        feat = self.model.in_shape(self.cut)
        for step, train, evaluate in self.rounds():
            req = self.recv(MsgType.CONSENT_REQ, MsgType.CONSENT_DENY)
            if req.msg_type is MsgType.CONSENT_DENY:
                self.run.aborted = f"consent denied by alice at step {step}"
                return self.finish()
            if not self.consent(step):
                self.send(MsgType.CONSENT_DENY)
                self.run.aborted = f"consent denied by bob at step {step}"
                return self.finish()
            self.send(MsgType.CONSENT_ACK)
            self.state.advance("forward")
            act = self.recv(MsgType.FORWARD_ACT).payload.astype(np.float64, copy=False)
            n_train = 0
            if train:
                idx = next(order)
                n_train = len(idx)
            n_eval = len(self.y_test) if evaluate else 0
            if act.shape != (n_train + n_eval, *feat):
                self.abort("activation shape mismatch")
                raise ProtocolError(f"activations {list(act.shape)}, expected "
                                    f"{[n_train + n_eval, *feat]}", self.finish())
            if evaluate:
                loss = forward_range(self.model, self.params, act[n_train:], self.cut,
                                     labels=self.y_test).loss
                self._check(loss, step)
                self.points.append((step, loss))
            self.state.advance("backward")
            grads = None
            if train:
                fwd = forward_range(self.model, self.params, act[:n_train], self.cut, labels=self.y_train[idx])
                self._check(fwd.loss, step)
                grads, dx = backward_range(self.model, self.params, fwd)
            else:
                dx = np.zeros((0, *feat))
            self.send(MsgType.BACKWARD_GRAD, dx)
            self.recv(MsgType.STEP_COMMIT)
            self.send(MsgType.STEP_COMMIT)
            self.commit(step, train, grads)
        return self.finish()

    def _check(self, loss, step):
        if not np.isfinite(loss):
            self.abort(f"non-finite loss at step {step}")
            raise NonFiniteError(f"loss became {loss} at step {step}; aborting run")


def run_split_training(role: Role, transport, model: ModelSpec, params: ParamStore, config: TrainConfig,
                       data: Dataset, test: Dataset, consent: Consent | None = None,
                       on_commit: Callable[[int, ParamStore], None] | None = None,
                       wire_dtype: int = 0x08) -> TrainingRun:
    """Run one party of a split-training session to completion.

    ``params`` holds only this party's layers. Alice passes features
    (``data.x``, ``test.x``), Bob passes labels (``data.y``, ``test.y``).
    Bob's run carries the evaluated loss curve; Alice's records committed steps
    only. A consent denial returns a partial run with ``aborted`` set.
    """
    cls = _Alice if role.name == "alice" else _Bob
    endpoint = cls(role, transport, model, params, config, consent, on_commit, wire_dtype, data=data, test=test)
    return endpoint.loop()
