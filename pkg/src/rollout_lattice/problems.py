"""Planning problem containers and the problems.json interchange format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

from .geometry import Pose2D

if TYPE_CHECKING:
    from .world_map import GridMap


@dataclass(eq=False)
class PlanningProblem:
    """One query: map, start pose, goal position with a capture tolerance."""

    map: "GridMap"
    start: Pose2D
    goal: Pose2D
    goal_tolerance: float = 0.5

    def __post_init__(self):
        if self.goal_tolerance <= 0:
            raise ValueError("goal tolerance must be > 0")


@dataclass(frozen=True)
class ProblemRef:
    """File-backed problem reference used by the harness and CLI."""

    map_id: str
    problem_id: str
    map_path: str
    start: tuple[float, float, float]
    goal: tuple[float, float]
    tolerance: float = 0.5

    def to_problem(self, grid: "GridMap") -> PlanningProblem:
        return PlanningProblem(
            map=grid,
            start=Pose2D(*self.start),
            goal=Pose2D(self.goal[0], self.goal[1]),
            goal_tolerance=self.tolerance,
        )


def save_problem_set(refs: list[ProblemRef], path) -> None:
    payload = {
        "format": "problems-1",
        "problems": [
            {
                "map_id": r.map_id,
                "problem_id": r.problem_id,
                "map_path": r.map_path,
                "start": list(r.start),
                "goal": list(r.goal),
                "tolerance": r.tolerance,
            }
            for r in refs
        ],
    }
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_problem_set(path) -> list[ProblemRef]:
    base = Path(path).parent
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("format") != "problems-1":
        raise ValueError(f"{path}: not a problems-1 file")
    refs = []
    for row in payload["problems"]:
        map_path = row["map_path"]
        if not Path(map_path).is_absolute():
            map_path = str(base / map_path)
        refs.append(
            ProblemRef(
                map_id=row["map_id"],
                problem_id=row["problem_id"],
                map_path=map_path,
                start=tuple(row["start"]),
                goal=tuple(row["goal"]),
                tolerance=row.get("tolerance", 0.5),
            )
        )
    return refs
