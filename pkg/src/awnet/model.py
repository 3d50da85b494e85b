"""Combined model bundle: flow net + fusion net + synthesis options.

A bundle checkpoint stores both parameter sets in the flat tensor
container together with the reference mode, the noise variance used in
training, and a fingerprint of the training configuration.  The two
reference branches of the multi-reference variant share one flow network;
that choice is recorded in the checkpoint metadata.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import torch.nn as nn

from .checkpoint import config_hash, load_module, load_tensors, module_tensors, save_tensors
from .errors import ConfigError
from .flow import PyramidFlowNet
from .fusion import SINGLE_REFERENCE, ConvDP, FusionNet


@dataclass
class ModelBundle:
    """Everything needed to run synthesis."""

    flow_net: PyramidFlowNet
    fusion_net: nn.Module  # FusionNet or ConvDP
    mode: str = SINGLE_REFERENCE
    noise_variance: float = 0.0
    config: dict = field(default_factory=dict)
    upscaler: Optional[nn.Module] = None

    @classmethod
    def fresh(cls, mode: str = SINGLE_REFERENCE, head: str = "awfusion", **kwargs) -> "ModelBundle":
        fusion = FusionNet(mode) if head == "awfusion" else ConvDP()
        return cls(flow_net=PyramidFlowNet(), fusion_net=fusion, mode=mode, **kwargs)


def save_model(path, bundle: ModelBundle, extra_meta: dict | None = None) -> None:
    tensors = {}
    tensors.update(module_tensors("flow", bundle.flow_net))
    tensors.update(module_tensors("fusion", bundle.fusion_net))
    if bundle.upscaler is not None:
        tensors.update(module_tensors("upscaler", bundle.upscaler))
    meta = {
        "kind": "model",
        "mode": bundle.mode,
        "head": "convdp" if isinstance(bundle.fusion_net, ConvDP) else "awfusion",
        "noise_variance": bundle.noise_variance,
        "config_hash": config_hash(bundle.config),
        "config": bundle.config,
        "flow_shared_across_references": True,
        "has_upscaler": bundle.upscaler is not None,
    }
    if bundle.upscaler is not None:
        meta["upscaler_scale"] = int(getattr(bundle.upscaler, "scale", 4))
    if extra_meta:
        meta.update(extra_meta)
    save_tensors(path, tensors, meta)


def load_model(path) -> ModelBundle:
    tensors, meta = load_tensors(path)
    if meta.get("kind") != "model":
        raise ConfigError(f"{path} is not a model checkpoint")
    mode = meta["mode"]
    flow_net = PyramidFlowNet()
    load_module("flow", flow_net, tensors)
    if meta.get("head") == "convdp":
        fusion_net: nn.Module = ConvDP()
    else:
        fusion_net = FusionNet(mode)
    load_module("fusion", fusion_net, tensors)
    upscaler = None
    if meta.get("has_upscaler"):
        from .recurrent import LearnedUpscaler

        upscaler = LearnedUpscaler(scale=int(meta.get("upscaler_scale", 4)))
        load_module("upscaler", upscaler, tensors)
    return ModelBundle(
        flow_net=flow_net,
        fusion_net=fusion_net,
        mode=mode,
        noise_variance=float(meta.get("noise_variance", 0.0)),
        config=meta.get("config", {}),
        upscaler=upscaler,
    )
