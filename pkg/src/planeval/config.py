"""Run configuration: judge backend, model ids per role, weights source,
loop settings, output directory, and seed."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import PlanEvalError
from .gateway import HttpJudge, JudgeGateway, ScriptedJudge
from .loop import LoopConfig
from .metrics import EvalMode, WeightVector

DEFAULT_MODELS = {
    "metric-eval": "metric-judge",
    "one-shot-judge": "oneshot-judge",
    "step-evaluator": "step-evaluator",
    "plan-optimizer": "plan-optimizer",
}


@dataclass
class RunConfig:
    judge: str = "scripted:"  # "remote" or "scripted:<path>"
    backend_url: str = ""
    models: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_MODELS))
    rate_limits: dict[str, float] = field(default_factory=dict)
    max_concurrency: int = 8
    weights_path: str | None = None
    mode: EvalMode = EvalMode.REFERENCE_BASED
    prompt_style: str = "deconstructed"  # or "single"
    loop: LoopConfig = field(default_factory=LoopConfig)
    out_dir: str = "runs/out"
    cache_dir: str | None = None
    seed: int = 0
    workers: int = 1
    figures: bool = True
    render_text: bool = False

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        cfg = cls()
        backend = raw.get("backend", {})
        cfg.judge = raw.get("judge", cfg.judge)
        cfg.backend_url = backend.get("url", "")
        cfg.models.update(raw.get("models", {}))
        cfg.rate_limits = {str(k): float(v) for k, v in raw.get("rate_limits", {}).items()}
        cfg.max_concurrency = int(raw.get("max_concurrency", cfg.max_concurrency))
        cfg.weights_path = raw.get("weights_path")
        if raw.get("mode"):
            cfg.mode = EvalMode(raw["mode"])
        cfg.prompt_style = raw.get("prompt_style", cfg.prompt_style)
        loop_raw = raw.get("loop", {})
        cfg.loop = LoopConfig(
            max_passes=int(loop_raw.get("max_passes", 4)),
            max_optimizer_calls_per_pass=int(loop_raw.get("max_optimizer_calls_per_pass", 64)),
        )
        cfg.out_dir = raw.get("out_dir", cfg.out_dir)
        cfg.cache_dir = raw.get("cache_dir")
        cfg.seed = int(raw.get("seed", 0))
        cfg.workers = int(raw.get("workers", 1))
        for key in ("weights_path",):
            value = getattr(cfg, key)
            if value and not Path(value).exists():
                raise PlanEvalError(f"config references missing file: {value}")
        return cfg

    def load_weights(self) -> WeightVector:
        if not self.weights_path:
            return WeightVector.default()
        raw = json.loads(Path(self.weights_path).read_text(encoding="utf-8"))
        if isinstance(raw, dict) and "quantized" in raw:
            raw = raw["quantized"]
        if isinstance(raw, dict):
            from .metrics import MetricKind

            return WeightVector(weights={MetricKind(k): float(v) for k, v in raw.items()})
        return WeightVector.from_sequence(raw)

    def build_gateway(self) -> JudgeGateway:
        if self.judge == "remote":
            if not self.backend_url:
                raise PlanEvalError("remote judge requires backend.url in the config")
            backend = HttpJudge(url=self.backend_url)
        elif self.judge.startswith("scripted:"):
            path = self.judge.split(":", 1)[1]
            if not path:
                raise PlanEvalError("scripted judge requires a rules file: --judge scripted:PATH")
            backend = ScriptedJudge.from_file(path)
        else:
            raise PlanEvalError(f"unknown judge spec {self.judge!r}; use 'remote' or 'scripted:PATH'")
        return JudgeGateway(
            backend,
            cache_dir=self.cache_dir,
            rate_limit_per_model=self.rate_limits,
            max_concurrency=self.max_concurrency,
        )

    def snapshot(self) -> dict:
        return {
            "judge": self.judge,
            "backend_url": self.backend_url,
            "models": dict(sorted(self.models.items())),
            "rate_limits": dict(sorted(self.rate_limits.items())),
            "mode": self.mode.value,
            "prompt_style": self.prompt_style,
            "loop": {
                "max_passes": self.loop.max_passes,
                "max_optimizer_calls_per_pass": self.loop.max_optimizer_calls_per_pass,
            },
            "seed": self.seed,
            "workers": self.workers,
        }
