"""Natural-evolution-strategies patch optimizer with antithetic sampling.

The estimator is the canonical antithetic form: sample N standard-normal
directions, evaluate the objective at theta +/- sigma*eps_i, and combine

    g_hat = 1/(2*N*sigma) * sum_i (L(theta + sigma*eps_i) - L(theta - sigma*eps_i)) * eps_i

followed by a clipped descent step theta <- clip(theta - alpha * g_hat).
Multi-oracle objectives (universal patches) aggregate per-oracle losses by
mean or max. Each antithetic pair shares one freshly-seeded transform set,
so the pair's loss difference reflects the perturbation rather than
transform noise.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .eot import EotConfig, expected_loss, sample_transforms
from .errors import InvalidInputError, OracleError, ProtocolError, TransportError
from .imaging import Frame, Patch, Placement, clip_pixels, total_variation
from .oracle import EmbeddingClient, EmbeddingRef, OracleClient, semantic_loss
from .scripted import parse_numeric_loss


@dataclass(frozen=True)
class NesConfig:
    n_directions: int = 20
    sigma: float = 0.1
    alpha: float = 0.02
    iterations: int = 150
    lambda_tv: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if self.n_directions < 1:
            raise InvalidInputError(f"n_directions must be >= 1, got {self.n_directions}")
        if self.sigma <= 0:
            raise InvalidInputError(f"sigma must be > 0, got {self.sigma}")
        if self.alpha < 0:
            raise InvalidInputError(f"alpha must be >= 0, got {self.alpha}")
        if self.iterations < 0:
            raise InvalidInputError(f"iterations must be >= 0, got {self.iterations}")
        if self.lambda_tv < 0:
            raise InvalidInputError(f"lambda_tv must be >= 0, got {self.lambda_tv}")


@dataclass
class ObjectiveSpec:
    """What a patch is optimized against.

    One oracle for a targeted patch, several for a universal one. loss_mode
    "semantic" embeds oracle text against target_text; "numeric" parses the
    loss straight from the text (diagnostic fixtures). Frames pair each
    evaluation image with its patch placement.
    """

    oracles: list[OracleClient]
    target_text: str
    frames: list[tuple[Frame, Placement]]
    eot: EotConfig
    embedding: EmbeddingClient | None = None
    aggregation: str = "mean"
    loss_mode: str = "semantic"
    patch_width: int = 8
    patch_height: int = 8

    def __post_init__(self):
        if not self.oracles:
            raise InvalidInputError("objective needs at least one oracle")
        self.oracles = [
            o if isinstance(o, OracleClient) else OracleClient(o) for o in self.oracles
        ]
        if not self.target_text:
            raise InvalidInputError("target_text must be non-empty")
        if not self.frames:
            raise InvalidInputError("objective needs at least one evaluation frame")
        if self.aggregation not in ("mean", "max"):
            raise InvalidInputError(f"aggregation must be mean or max, got {self.aggregation!r}")
        if self.loss_mode not in ("semantic", "numeric"):
            raise InvalidInputError(f"loss_mode must be semantic or numeric, got {self.loss_mode!r}")
        if self.loss_mode == "semantic" and self.embedding is None:
            self.embedding = EmbeddingClient(EmbeddingRef())

    def ledgers(self) -> list:
        seen: dict[int, object] = {}
        for c in self.oracles:
            seen.setdefault(id(c.ledger), c.ledger)
        return list(seen.values())

    def query_count(self) -> int:
        return sum(ledger.count() for ledger in self.ledgers())


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    loss: float
    grad_norm: float
    objective_evals: int
    oracle_queries: int
    wall_time: float

    def to_json(self) -> dict:
        return {
            "iteration": self.iteration,
            "loss": self.loss,
            "grad_norm": self.grad_norm,
            "objective_evals": self.objective_evals,
            "oracle_queries": self.oracle_queries,
            "wall_time": self.wall_time,
        }


def write_trace_jsonl(trace: Sequence[IterationRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in trace:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def evaluate_objective(
    spec: ObjectiveSpec,
    patch: Patch,
    lambda_tv: float = 0.0,
    eot_seed: int | None = None,
) -> float:
    """Expected semantic (or numeric) loss of a patch under an objective.

    Per oracle: the EoT-expected per-frame loss, averaged over evaluation
    frames. Per-oracle values aggregate by the objective's rule, then the TV
    penalty is added. One shared transform set per call keeps the oracle
    call count at K * len(frames) * len(oracles) exactly.
    """
    eot = spec.eot if eot_seed is None else replace(spec.eot, seed=eot_seed)
    transforms = sample_transforms(eot)

    if spec.loss_mode == "semantic":
        target_vec = spec.embedding.embed(spec.target_text)

    per_oracle = np.empty(len(spec.oracles), dtype=np.float64)
    for oi, client in enumerate(spec.oracles):
        if spec.loss_mode == "semantic":

            def loss_of_frame(fr: Frame, _c=client) -> float:
                return semantic_loss(spec.embedding.embed(_c.query(fr).text), target_vec)

        else:

            def loss_of_frame(fr: Frame, _c=client) -> float:
                return parse_numeric_loss(_c.query(fr).text)

        frame_losses = np.empty(len(spec.frames), dtype=np.float64)
        for fi, (frame, placement) in enumerate(spec.frames):
            try:
                frame_losses[fi] = expected_loss(
                    loss_of_frame, frame, placement, patch, eot, transforms=transforms
                )
            except (OracleError, TransportError, ProtocolError) as exc:
                raise OracleError(
                    f"objective failed on oracle {client.ref.id!r} frame {fi}: {exc}"
                ) from exc
        per_oracle[oi] = float(np.mean(frame_losses))

    agg = float(np.mean(per_oracle)) if spec.aggregation == "mean" else float(np.max(per_oracle))
    if lambda_tv:
        agg += lambda_tv * total_variation(patch)
    return agg


def nes_gradient(
    objective: Callable[[np.ndarray], float],
    theta: np.ndarray,
    n_directions: int,
    sigma: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Antithetic NES estimate for a plain array objective (2N evaluations)."""
    grad = np.zeros_like(theta, dtype=np.float64)
    for _ in range(n_directions):
        eps = rng.standard_normal(theta.shape)
        delta = objective(theta + sigma * eps) - objective(theta - sigma * eps)
        grad += delta * eps
    return grad / (2.0 * n_directions * sigma)


def estimate_gradient(
    spec: ObjectiveSpec,
    patch: Patch,
    config: NesConfig,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Spec-level antithetic estimate; exactly 2N objective evaluations.

    Each direction draws a fresh EoT subseed shared by its +/- pair. The
    reduction is an indexed sum over directions, so concurrent candidate
    evaluation cannot change the value for a fixed seed.
    """
    grad, _ = _estimate_gradient_inner(spec, patch, config, rng or np.random.default_rng(config.seed))
    return grad


def _estimate_gradient_inner(
    spec: ObjectiveSpec, patch: Patch, config: NesConfig, rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    theta = patch.pixels
    grad = np.zeros_like(theta, dtype=np.float64)
    losses = np.empty(2 * config.n_directions, dtype=np.float64)
    for i in range(config.n_directions):
        eps = rng.standard_normal(theta.shape)
        eot_seed = int(rng.integers(0, 2**63))
        lp = evaluate_objective(spec, Patch(theta + config.sigma * eps), config.lambda_tv, eot_seed)
        lm = evaluate_objective(spec, Patch(theta - config.sigma * eps), config.lambda_tv, eot_seed)
        losses[2 * i] = lp
        losses[2 * i + 1] = lm
        grad += (lp - lm) * eps
    grad /= 2.0 * config.n_directions * config.sigma
    return grad, float(np.mean(losses))


def nes_step(patch: Patch, gradient: np.ndarray, config: NesConfig) -> Patch:
    """Descent step on the loss, hard-clipped back into the RGB range."""
    gradient = np.asarray(gradient, dtype=np.float64)
    if gradient.shape != patch.pixels.shape:
        raise InvalidInputError(
            f"gradient shape {gradient.shape} != patch shape {patch.pixels.shape}"
        )
    return clip_pixels(Patch(patch.pixels - config.alpha * gradient))


def _rng_state(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state)


def _restore_rng(state_json: str) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = json.loads(state_json)
    return rng


def save_checkpoint(path, patch: Patch, iteration: int, rng: np.random.Generator) -> None:
    np.savez(
        path,
        pixels=patch.pixels,
        iteration=np.int64(iteration),
        rng_state=np.frombuffer(_rng_state(rng).encode("utf-8"), dtype=np.uint8),
    )


def load_checkpoint(path) -> tuple[Patch, int, np.random.Generator]:
    data = np.load(path)
    patch = Patch(np.asarray(data["pixels"], dtype=np.float64))
    iteration = int(data["iteration"])
    rng = _restore_rng(bytes(data["rng_state"]).decode("utf-8"))
    return patch, iteration, rng


def optimize(
    spec: ObjectiveSpec,
    config: NesConfig,
    checkpoint_path=None,
    resume_from=None,
) -> tuple[Patch, list[IterationRecord]]:
    """Full NES run from a seeded random patch.

    Runs ``config.iterations`` rounds of estimate + step; the trace records
    every completed iteration. On an oracle failure the last patch,
    iteration index, and RNG state are persisted to ``checkpoint_path`` (if
    given) and the error re-raised; resuming from that checkpoint replays
    the identical remaining trajectory.
    """
    if resume_from is not None:
        patch, start_iter, rng = load_checkpoint(resume_from)
    else:
        rng = np.random.default_rng(config.seed)
        patch = Patch(
            rng.uniform(0.0, 255.0, size=(spec.patch_height, spec.patch_width, 3))
        )
        start_iter = 0

    trace: list[IterationRecord] = []
    evals = 0
    t0 = time.perf_counter()
    queries0 = spec.query_count()
    for it in range(start_iter, config.iterations):
        state_before = _rng_state(rng)
        try:
            grad, mean_loss = _estimate_gradient_inner(spec, patch, config, rng)
        except (OracleError, TransportError, ProtocolError):
            if checkpoint_path is not None:
                save_checkpoint(checkpoint_path, patch, it, _restore_rng(state_before))
            raise
        patch = nes_step(patch, grad, config)
        evals += 2 * config.n_directions
        trace.append(
            IterationRecord(
                iteration=it,
                loss=mean_loss,
                grad_norm=float(np.linalg.norm(grad)),
                objective_evals=evals,
                oracle_queries=spec.query_count() - queries0,
                wall_time=time.perf_counter() - t0,
            )
        )
    return patch, trace
