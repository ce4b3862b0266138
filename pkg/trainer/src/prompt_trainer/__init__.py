"""LoRA fine-tuning backend and adapter server for the prompt-model loop."""

from .model import TinyLM, build_base_model, inject_lora
from .serve import serve_adapter
from .train import overfit_smoke, train_adapter

__all__ = ["TinyLM", "build_base_model", "inject_lora", "overfit_smoke",
           "serve_adapter", "train_adapter"]

__version__ = "0.1.0"
