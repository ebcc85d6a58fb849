"""Ground-truth trajectory generator for fitting and meta-analysis tests.

Losses are the forward law evaluation times multiplicative log-normal noise
(one per-run draw, one per-checkpoint draw), plus an optional additive warmup
bump with compact support. Noise draws always happen, even at sigma 0, so a
noiseless generation is byte-identical to forward evaluation and bump/no-bump
generations agree exactly wherever the bump is zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import ValidationError
from .law import LawParams, eval_law
from .records import CheckpointRecord, ScaledFamily


@dataclass(frozen=True)
class WarmupBump:
    """Additive distortion amplitude * max(0, 1 - tokens/span): early, decaying."""

    amplitude: float
    span_tokens: int

    def __post_init__(self):
        if not math.isfinite(self.amplitude):
            raise ValidationError(f"bump amplitude must be finite, got {self.amplitude}")
        if self.span_tokens < 1:
            raise ValidationError(f"bump span_tokens must be >= 1, got {self.span_tokens}")

    def at(self, tokens: int) -> float:
        return self.amplitude * max(0.0, 1.0 - tokens / self.span_tokens)


@dataclass(frozen=True)
class SynthSpec:
    truth: LawParams
    sizes: tuple[int, ...]
    tokens_per_run: int | tuple[int, ...] = 2_000_000_000
    checkpoints_per_run: int = 20
    noise_sigma: float = 0.0
    seed_sigma: float = 0.0
    warmup_bump: WarmupBump | None = None
    rng_seed: int = 0
    seeds_per_size: int = 1
    first_checkpoint_fraction: float = 0.01
    family_id: str = "synthetic"

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if not self.sizes:
            raise ValidationError("sizes must be non-empty")
        if any(s < 1 for s in self.sizes):
            raise ValidationError(f"sizes must be positive, got {self.sizes}")
        if len(set(self.sizes)) != len(self.sizes):
            raise ValidationError(f"sizes must be distinct, got {self.sizes}")
        if isinstance(self.tokens_per_run, (int, np.integer)):
            object.__setattr__(self, "tokens_per_run", int(self.tokens_per_run))
            tokens = (self.tokens_per_run,) * len(self.sizes)
        else:
            tokens = tuple(int(t) for t in self.tokens_per_run)
            object.__setattr__(self, "tokens_per_run", tokens)
            if len(tokens) != len(self.sizes):
                raise ValidationError(
                    f"tokens_per_run list length {len(tokens)} != number of sizes {len(self.sizes)}"
                )
        if any(t < 1 for t in tokens):
            raise ValidationError("tokens_per_run entries must be positive")
        if self.checkpoints_per_run < 1:
            raise ValidationError(f"checkpoints_per_run must be >= 1, got {self.checkpoints_per_run}")
        if self.noise_sigma < 0 or self.seed_sigma < 0:
            raise ValidationError("noise sigmas must be nonnegative")
        if self.seeds_per_size < 1:
            raise ValidationError(f"seeds_per_size must be >= 1, got {self.seeds_per_size}")
        if not (0.0 < self.first_checkpoint_fraction <= 1.0):
            raise ValidationError(
                f"first_checkpoint_fraction must lie in (0, 1], got {self.first_checkpoint_fraction}"
            )

    def run_tokens(self, size_index: int) -> int:
        if isinstance(self.tokens_per_run, tuple):
            return self.tokens_per_run[size_index]
        return self.tokens_per_run

    @classmethod
    def from_dict(cls, data: Mapping) -> "SynthSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown synth fields: {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        kwargs["truth"] = LawParams.from_dict(data["truth"])
        if data.get("warmup_bump") is not None:
            bump = data["warmup_bump"]
            kwargs["warmup_bump"] = WarmupBump(
                amplitude=float(bump["amplitude"]), span_tokens=int(bump["span_tokens"])
            )
        if "sizes" in kwargs:
            kwargs["sizes"] = tuple(int(s) for s in kwargs["sizes"])
        if "tokens_per_run" in kwargs and isinstance(kwargs["tokens_per_run"], (list, tuple)):
            kwargs["tokens_per_run"] = tuple(int(t) for t in kwargs["tokens_per_run"])
        return cls(**kwargs)


def checkpoint_schedule(total_tokens: int, checkpoints: int, first_fraction: float) -> list[int]:
    """Log-uniform token counts from first_fraction * total up to total, strictly increasing."""
    if checkpoints == 1:
        return [total_tokens]
    start = max(1, round(first_fraction * total_tokens))
    raw = np.geomspace(start, total_tokens, checkpoints)
    schedule: list[int] = []
    prev = 0
    for value in raw:
        tick = max(prev + 1, int(round(value)))
        schedule.append(tick)
        prev = tick
    if schedule[-1] > total_tokens:
        raise ValidationError(
            f"checkpoint schedule overflows the run: {checkpoints} checkpoints do not fit "
            f"in {total_tokens} tokens from fraction {first_fraction}"
        )
    return schedule


def generate(spec: SynthSpec) -> ScaledFamily:
    """Deterministic synthetic family; run order is sizes as listed, seeds ascending."""
    rng = np.random.default_rng(spec.rng_seed & 0xFFFFFFFFFFFFFFFF)
    records: list[CheckpointRecord] = []
    for size_index, size in enumerate(spec.sizes):
        total = spec.run_tokens(size_index)
        schedule = checkpoint_schedule(total, spec.checkpoints_per_run, spec.first_checkpoint_fraction)
        for seed in range(spec.seeds_per_size):
            run_offset = rng.normal(0.0, spec.seed_sigma)
            ckpt_noise = rng.normal(0.0, spec.noise_sigma, size=len(schedule))
            for tokens, eps in zip(schedule, ckpt_noise):
                loss = eval_law(spec.truth, size, tokens) * math.exp(run_offset) * math.exp(eps)
                if spec.warmup_bump is not None:
                    loss += spec.warmup_bump.at(tokens)
                records.append(
                    CheckpointRecord(
                        family_id=spec.family_id,
                        model_id=f"{spec.family_id}-n{size}",
                        num_params=size,
                        tokens_seen=tokens,
                        total_tokens=total,
                        loss=loss,
                        seed=seed,
                    )
                )
    return ScaledFamily.from_records(spec.family_id, records)
