"""
Task-conditioned hierarchical skill routing.

Active general skills are always included. Task-specific skills of the task's
type are scored by cosine similarity against the task embedding, filtered by
the similarity threshold and truncated to the top K.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional

import numpy as np

from harness.utils.run_settings import ConfigError
from skill_bank import ActiveView, Skill

logger = logging.getLogger(__name__)


class RetrievalError(Exception):
    """Base class for routing errors."""


class DimensionMismatchError(RetrievalError):
    pass


class ZeroVectorError(RetrievalError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    top_k: int = 3
    emb_threshold: float = 0.45
    embedding_dim: int = 16

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not -1.0 <= self.emb_threshold <= 1.0:
            raise ConfigError(f"emb_threshold must lie in [-1, 1], got {self.emb_threshold}")
        if self.embedding_dim < 2:
            raise ConfigError(f"embedding_dim must be >= 2, got {self.embedding_dim}")


@dataclass(frozen=True)
class RoutedSet:
    """Skills routed to one task: every active general skill plus the retrieved task skills."""
    task_id: str
    general_ids: List[str] = field(default_factory=list)
    task_ids: List[str] = field(default_factory=list)
    similarities: Dict[str, float] = field(default_factory=dict)

    @property
    def skill_ids(self) -> List[str]:
        return list(self.general_ids) + list(self.task_ids)

    def contains(self, skill_id: str) -> bool:
        return skill_id in self.general_ids or skill_id in self.task_ids

    def __len__(self) -> int:
        return len(self.general_ids) + len(self.task_ids)

    @property
    def anchor_id(self) -> str:
        """Top-1 retrieved task skill, or "" when nothing task-specific was retrieved."""
        return self.task_ids[0] if self.task_ids else ""

    def without(self, skill_id: str) -> "RoutedSet":
        return RoutedSet(
            task_id=self.task_id,
            general_ids=[s for s in self.general_ids if s != skill_id],
            task_ids=[s for s in self.task_ids if s != skill_id],
            similarities={k: v for k, v in self.similarities.items() if k != skill_id},
        )

    def to_dict(self) -> Dict[str, object]:
        return {"task_id": self.task_id, "general_ids": list(self.general_ids), "task_ids": list(self.task_ids)}


def cosine(u, v) -> float:
    """
    Cosine similarity of two vectors, clipped to [-1, 1].

    Raises:
        DimensionMismatchError: vectors have different shapes
        ZeroVectorError: either vector has zero norm
    """
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"Cannot compare vectors of shape {a.shape} and {b.shape}")
    norm_a = np.linalg.norm(a)
    norm_b = np.linalg.norm(b)
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVectorError("Cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def routing_key(skill: Skill) -> np.ndarray:
    return skill.embedding


def rank_candidates(query: np.ndarray, keys: Dict[str, np.ndarray], candidates: Iterable[str],
                    threshold: float, top_k: int) -> List[tuple]:
    """Threshold first, then top-K by descending similarity with ascending id on ties."""
    scored = []
    for skill_id in candidates:
        sim = cosine(query, keys[skill_id])
        if sim >= threshold:
            scored.append((skill_id, sim))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:top_k]


def route(view: ActiveView, task, cfg: RetrievalConfig,
          exclude: Optional[FrozenSet[str]] = None) -> RoutedSet:
    """
    Route a task against an active view of the bank.

    Args:
        view: active view for task.task_type
        task: anything with ``id`` and ``embedding``
        cfg: retrieval parameters
        exclude: ids treated as inactive (leave-one-out evaluation)

    Returns:
        RoutedSet with sorted general ids and ranked task ids
    """
    exclude = exclude or frozenset()
    general_ids = sorted(s for s in view.general_active if s not in exclude)
    ranked = rank_candidates(
        task.embedding,
        view.keys,
        (s for s in view.task_active if s not in exclude),
        cfg.emb_threshold,
        cfg.top_k,
    )
    return RoutedSet(
        task_id=task.id,
        general_ids=general_ids,
        task_ids=[skill_id for skill_id, _ in ranked],
        similarities={skill_id: sim for skill_id, sim in ranked},
    )
