"""
Result serialization

Writes trajectories, metrics, fit reports, Sobol indices, vulnerability grids
and scenario sweeps into an output directory, followed by a manifest listing
every file with its SHA-256 hash.
"""

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from errors import OutputWriteError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
MANIFEST_NAME = 'manifest.json'
SWEEP_VARIABLES = ('cyano', 'algae', 'mclr', 'oxygen', 'phosphorus',
                   'burden_daphnia', 'burden_perch', 'burden_walleye')


def to_jsonable(value: Any) -> Any:
    """Convert numpy types to plain Python and non-finite floats to None"""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps(payload: Any) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2, allow_nan=False) + '\n'


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for block in iter(lambda: f.read(65536), b''):
            digest.update(block)
    return digest.hexdigest()


@dataclass
class RunOutputs:
    """Everything one workflow produced; absent parts are None"""
    trajectory: Any = None       # simulator.Trajectory
    metrics: Any = None          # simulator.SeasonalMetrics
    fit: Any = None              # calibrator.FitResult
    sobol: Any = None            # sensitivity_analyzer.SobolResult
    grid: Any = None             # scenario_runner.VulnerabilityGrid
    sweep: Optional[List[Any]] = None  # scenario_runner.SweepItem list


class ResultWriter:
    """Writes result files into one output directory and tracks them for the manifest"""

    def __init__(self, directory: str):
        self.directory = directory
        self.written: List[str] = []

    def _path(self, name: str) -> str:
        return os.path.join(self.directory, name)

    def _track(self, name: str) -> str:
        if name not in self.written:
            self.written.append(name)
        return self._path(name)

    def write_csv(self, name: str, frame: pd.DataFrame) -> str:
        path = self._track(name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
        return path

    def write_json(self, name: str, payload: Any) -> str:
        path = self._track(name)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(dumps(payload))
        return path

    def write_trajectory(self, trajectory, name: str = 'trajectory.csv') -> str:
        return self.write_csv(name, trajectory.to_frame())

    def write_metrics(self, metrics, trajectory=None, name: str = 'metrics.json') -> str:
        payload = {'metrics': metrics.to_dict()}
        if trajectory is not None:
            payload['integration'] = trajectory.metadata
            payload['forcing_warnings'] = len(trajectory.warnings)
            payload['toxin_ledger_error'] = trajectory.toxin_ledger_error()
            payload['phosphorus_ledger_error'] = trajectory.phosphorus_ledger_error()
        return self.write_json(name, payload)

    def write_fit(self, fit) -> str:
        return self.write_json('fit_report.json', fit.to_dict())

    def write_sobol(self, sobol) -> List[str]:
        return [
            self.write_csv('sobol_indices.csv', sobol.to_frame()),
            self.write_json('sobol.json', sobol.to_dict()),
        ]

    def write_grid(self, grid) -> List[str]:
        return [
            self.write_csv('vulnerability_grid.csv', grid.to_frame()),
            self.write_json('vulnerability_grid.json', grid.to_dict()),
        ]

    def write_sweep(self, items) -> List[str]:
        """Long-format curves keyed by scenario label, plus per-scenario metrics"""
        paths = []
        frames = []
        for item in items:
            if item.trajectory is None:
                continue
            for variable in SWEEP_VARIABLES:
                frames.append(pd.DataFrame({
                    'label': item.spec.label,
                    'time': item.trajectory.times,
                    'variable': variable,
                    'value': item.trajectory.series(variable),
                }))
        if frames:
            paths.append(self.write_csv('sweep.csv', pd.concat(frames, ignore_index=True)))

        summary = []
        for item in items:
            entry = {'label': item.spec.label, 'ok': item.ok, 'error': item.error}
            if item.metrics is not None:
                entry['metrics'] = item.metrics.to_dict()
            summary.append(entry)
        paths.append(self.write_json('sweep_metrics.json', {'scenarios': summary}))
        return paths

    def write_manifest(self) -> Dict[str, Any]:
        entries = []
        for name in sorted(self.written):
            path = self._path(name)
            entries.append({'path': name, 'sha256': file_sha256(path), 'bytes': os.path.getsize(path)})
        manifest = {'files': entries}
        with open(self._path(MANIFEST_NAME), 'w', encoding='utf-8', newline='\n') as f:
            f.write(dumps(manifest))
        return manifest

    def cleanup(self) -> None:
        """Remove every file this writer created"""
        for name in self.written + [MANIFEST_NAME]:
            path = self._path(name)
            try:
                if os.path.exists(path):
                    os.remove(path)
            except OSError as e:
                logger.warning(f"Could not remove partial output {path}: {e}")
        self.written = []


def write_outputs(result: RunOutputs, directory: str) -> Dict[str, Any]:
    """Write every present part of result into directory and return the manifest.

    Raises:
        OutputWriteError: If any file cannot be written; files already written are removed
    """
    writer = ResultWriter(directory)
    try:
        os.makedirs(directory, exist_ok=True)
        if result.trajectory is not None:
            writer.write_trajectory(result.trajectory)
        if result.metrics is not None:
            writer.write_metrics(result.metrics, result.trajectory)
        if result.fit is not None:
            writer.write_fit(result.fit)
        if result.sobol is not None:
            writer.write_sobol(result.sobol)
        if result.grid is not None:
            writer.write_grid(result.grid)
        if result.sweep is not None:
            writer.write_sweep(result.sweep)
        manifest = writer.write_manifest()
    except (OSError, ValueError, TypeError) as e:
        writer.cleanup()
        raise OutputWriteError(f"Writing results to {directory} failed: {e}") from e
    logger.info(f"Wrote {len(manifest['files'])} result files to {directory}")
    return manifest
