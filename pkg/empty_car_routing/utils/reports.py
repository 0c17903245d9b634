"""
CSV report writing.

Every table is a UTF-8 CSV whose first line is a `# manifest: {...}` comment
carrying the RunManifest of the run that produced it. The same manifest is
also written next to the tables as manifest.json.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .models import (FleetSizingResult, FluidSolution, FluidTrajectory, NetworkParams, RoutingMatrix,
                     RunManifest, SimMetrics)

logger = logging.getLogger(__name__)

MANIFEST_PREFIX = "# manifest: "


class ReportWriter:
    """Collects named tables and writes them with a shared manifest"""

    def __init__(self, out_dir: Union[str, Path], manifest: RunManifest):
        self.out_dir = Path(out_dir)
        self.manifest = manifest
        self.tables: Dict[str, pd.DataFrame] = {}

    def add(self, name: str, frame: pd.DataFrame) -> None:
        self.tables[name] = frame

    def write(self) -> List[Path]:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        paths = [self.out_dir / f"{name}.csv" for name in self.tables]
        manifest = self.manifest.model_copy(update={"outputs": [str(p) for p in paths]})
        header = MANIFEST_PREFIX + json.dumps(manifest.model_dump(), sort_keys=True) + "\n"

        for path, frame in zip(paths, self.tables.values()):
            with open(path, "w", encoding="utf-8", newline="") as handle:
                handle.write(header)
                frame.to_csv(handle, index=False, float_format="%.10g")
            logger.info(f"Wrote {path}")

        (self.out_dir / "manifest.json").write_text(
            json.dumps(manifest.model_dump(), indent=2, sort_keys=True), encoding="utf-8"
        )
        return paths


def read_table(path: Union[str, Path]) -> Tuple[pd.DataFrame, dict]:
    """Load a report CSV and its manifest"""
    path = Path(path)
    with open(path, encoding="utf-8") as handle:
        first = handle.readline()
    manifest = json.loads(first[len(MANIFEST_PREFIX):]) if first.startswith(MANIFEST_PREFIX) else {}
    frame = pd.read_csv(path, skiprows=1 if manifest else 0)
    return frame, manifest


def matrix_frame(matrix: np.ndarray, name: str) -> pd.DataFrame:
    """Long format: one row per (i, j) with 1-based region labels"""
    r = matrix.shape[0]
    rows = [{"i": i + 1, "j": j + 1, name: float(matrix[i, j])} for i in range(r) for j in range(r)]
    return pd.DataFrame(rows)


def solution_frames(sol: FluidSolution, prefix: str = "") -> Dict[str, pd.DataFrame]:
    flows = matrix_frame(sol.e_bar, "e_bar").merge(matrix_frame(sol.f_bar, "f_bar"), on=["i", "j"])
    regions = pd.DataFrame({"region": np.arange(1, sol.a_bar.size + 1), "a_bar": sol.a_bar})
    regions["value"] = sol.value
    frames = {f"{prefix}fluid_solution": flows, f"{prefix}availability": regions}
    if sol.q_star is not None:
        frames[f"{prefix}q_star"] = routing_frame(sol.q_star)
    return frames


def routing_frame(routing: RoutingMatrix) -> pd.DataFrame:
    r = routing.r
    frame = pd.DataFrame(routing.q, columns=[f"to_{j + 1}" for j in range(r)])
    frame.insert(0, "from", np.arange(1, r + 1))
    return frame


def metrics_frame(metrics: SimMetrics) -> pd.DataFrame:
    r = metrics.requests.size
    frame = pd.DataFrame({
        "region": [str(i + 1) for i in range(r)],
        "requests": metrics.requests,
        "fulfilled": metrics.fulfilled,
        "fraction": metrics.fulfilled_fraction,
        "fraction_std": metrics.fraction_std,
        "time_available": metrics.time_available,
    })
    summary = pd.DataFrame([{
        "region": "all",
        "requests": int(metrics.requests.sum()),
        "fulfilled": int(metrics.fulfilled.sum()),
        "fraction": metrics.utility,
        "fraction_std": metrics.utility_std,
        "time_available": np.nan,
        "utility": metrics.utility,
        "ci_half_width": metrics.ci_half_width,
    }])
    return pd.concat([frame, summary], ignore_index=True)


def bins_frame(metrics: SimMetrics) -> pd.DataFrame:
    return pd.DataFrame([b.model_dump() for b in metrics.bins])


def trajectory_frame(trajectory: FluidTrajectory) -> pd.DataFrame:
    r = trajectory.states[0].r
    data: Dict[str, Sequence[float]] = {"time": trajectory.times}
    for i in range(r):
        for j in range(r):
            data[f"e_{i + 1}_{j + 1}"] = [s.e[i, j] for s in trajectory.states]
    for i in range(r):
        for j in range(r):
            data[f"f_{i + 1}_{j + 1}"] = [s.f[i, j] for s in trajectory.states]
    for i in range(r):
        data[f"u_{i + 1}"] = trajectory.u[:, i]
    data["mass"] = trajectory.mass
    if trajectory.lyapunov is not None:
        data["V"] = trajectory.lyapunov
        data["distance"] = trajectory.distance
    return pd.DataFrame(data)


def curve_frame(curve: Sequence[Tuple[int, np.ndarray]]) -> pd.DataFrame:
    rows = []
    for n_cars, availability in curve:
        row = {"N": n_cars}
        row.update({f"A_{i + 1}": float(a) for i, a in enumerate(availability)})
        rows.append(row)
    return pd.DataFrame(rows)


def fleet_frame(result: FleetSizingResult, params: Optional[NetworkParams] = None) -> pd.DataFrame:
    row = {
        "kappa": result.kappa,
        "verdict": result.verdict,
        "fleet_multiplier": result.fleet_multiplier,
        "full_mass": float(result.f_kappa.sum()),
        "empty_mass": float(result.e_kappa.sum()),
        "backhaul_kappa": result.backhaul_kappa,
        "triangle_ok": result.triangle_ok,
        "repaired": result.repaired,
    }
    if params is not None:
        row["n_cars"] = params.n_cars
        row["cars_needed"] = result.kappa * params.n_cars
    return pd.DataFrame([row])
