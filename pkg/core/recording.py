"""Backward passes over a module's most recent recorded forward pass."""

from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Union

import torch

from core.errors import NoForwardPassError

TensorOrSeq = Union[torch.Tensor, Sequence[torch.Tensor]]


@dataclass
class GradientSet:
    params: Dict[str, torch.Tensor] = field(default_factory=dict)
    inputs: Optional[torch.Tensor] = None

    def is_finite(self) -> bool:
        grads = list(self.params.values()) + ([self.inputs] if self.inputs is not None else [])
        return all(bool(torch.isfinite(g).all()) for g in grads)


def _as_list(value: TensorOrSeq):
    return [value] if isinstance(value, torch.Tensor) else list(value)


class RecordedForwardMixin:
    """For torch.nn.Module subclasses: keep an autograd-tracked forward run
    inside `recording()` so gradients can be requested against arbitrary
    upstream gradients. Ordinary forwards keep nothing."""

    _recorded_inputs: Optional[torch.Tensor] = None
    _recorded_outputs: Optional[list] = None
    _record_requested: bool = False

    @contextmanager
    def recording(self):
        self._record_requested = True
        try:
            yield self
        finally:
            self._record_requested = False

    def record_forward(self, inputs: Optional[torch.Tensor], outputs: TensorOrSeq):
        if self._record_requested and torch.is_grad_enabled():
            self._recorded_inputs = inputs
            self._recorded_outputs = _as_list(outputs)

    def clear_recording(self):
        self._recorded_inputs = None
        self._recorded_outputs = None

    @property
    def has_recording(self) -> bool:
        return self._recorded_outputs is not None

    def param_gradients(self, upstream: TensorOrSeq, retain_graph: bool = False) -> GradientSet:
        """Gradients of sum(upstream_i * output_i) w.r.t. every trainable
        parameter and, when it was tracked, the recorded input. The recording
        is dropped afterwards unless retain_graph is set"""
        if self._recorded_outputs is None:
            raise NoForwardPassError()
        upstream = _as_list(upstream)
        if len(upstream) != len(self._recorded_outputs):
            raise ValueError(f"expected {len(self._recorded_outputs)} upstream gradients, got {len(upstream)}")

        named = [(n, p) for n, p in self.named_parameters() if p.requires_grad]
        wrt = [p for _, p in named]
        track_input = self._recorded_inputs is not None and self._recorded_inputs.requires_grad
        if track_input:
            wrt.append(self._recorded_inputs)

        grads = torch.autograd.grad(self._recorded_outputs, wrt, grad_outputs=upstream,
                                    retain_graph=retain_graph, allow_unused=True)
        result = GradientSet()
        for (name, param), grad in zip(named, grads):
            result.params[name] = torch.zeros_like(param) if grad is None else grad
        if track_input:
            grad = grads[-1]
            result.inputs = torch.zeros_like(self._recorded_inputs) if grad is None else grad
        if not retain_graph:
            self.clear_recording()
        return result
