"""
Author: Perry Radau
Date: 2025-03-11
Brief description: Bit-exact model checkpoints (raw array bytes + JSON manifest)
Dependencies: Python 3.8+, numpy
Usage: CheckpointManager(out_dir).save(params, metadata) / .load()
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np

from errors import IntegrityError
from model import ModelConfig, ModelParams
from reporter import atomic_write_bytes, atomic_write_text
from tensorad import Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
BINARY_NAME = 'params.bin'
MANIFEST_NAME = 'params.json'


class CheckpointManager:
    """Saves and restores ModelParams in one directory.

    ``params.bin`` holds every array's C-order bytes back to back;
    ``params.json`` lists names, dtypes, shapes and byte offsets together with
    the model config, seed and caller metadata (selected features, scalers).
    """

    def __init__(self, checkpoint_dir: Path):
        """Initialize checkpoint manager.

        Args:
            checkpoint_dir: Directory holding params.bin and params.json
        """
        self.checkpoint_dir = Path(checkpoint_dir)

    @property
    def binary_path(self) -> Path:
        return self.checkpoint_dir / BINARY_NAME

    @property
    def manifest_path(self) -> Path:
        return self.checkpoint_dir / MANIFEST_NAME

    def exists(self) -> bool:
        return self.binary_path.exists() and self.manifest_path.exists()

    def save(self, params: ModelParams, metadata: Optional[Dict] = None) -> Path:
        """Write a checkpoint.

        Args:
            params: Parameters to persist
            metadata: JSON-serializable extras

        Returns:
            Path to the manifest
        """
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        entries = []
        chunks = []
        offset = 0
        for name, array in params.arrays().items():
            raw = np.ascontiguousarray(array).tobytes(order='C')
            entries.append({
                'name': name,
                'dtype': array.dtype.str,
                'shape': list(array.shape),
                'offset': offset,
                'nbytes': len(raw),
            })
            chunks.append(raw)
            offset += len(raw)
        payload = b''.join(chunks)

        manifest = {
            'format': CHECKPOINT_FORMAT,
            'kind': params.kind,
            'seed': params.seed,
            'config': params.config.to_dict(),
            'sha256': hashlib.sha256(payload).hexdigest(),
            'arrays': entries,
            'metadata': metadata or {},
        }
        atomic_write_bytes(self.binary_path, payload)
        atomic_write_text(self.manifest_path, json.dumps(manifest, indent=2))
        logger.info("Saved checkpoint with %d arrays to %s", len(entries), self.checkpoint_dir)
        return self.manifest_path

    def load(self) -> Tuple[ModelParams, Dict]:
        """Restore parameters and metadata.

        Returns:
            (ModelParams, metadata dict)

        Raises:
            FileNotFoundError: If either file is missing
            IntegrityError: If the payload does not match the manifest
        """
        if not self.exists():
            raise FileNotFoundError(f"No checkpoint in {self.checkpoint_dir}")

        with open(self.manifest_path, 'r', encoding='utf-8') as f:
            manifest = json.load(f)
        payload = self.binary_path.read_bytes()

        if manifest.get('format') != CHECKPOINT_FORMAT:
            raise IntegrityError(f"Unsupported checkpoint format: {manifest.get('format')}")
        if hashlib.sha256(payload).hexdigest() != manifest['sha256']:
            raise IntegrityError(f"Checkpoint payload in {self.binary_path} does not match its manifest")

        weights: Dict[str, Tensor] = {}
        buffers: Dict[str, np.ndarray] = {}
        for entry in manifest['arrays']:
            dtype = np.dtype(entry['dtype'])
            count = int(np.prod(entry['shape'])) if entry['shape'] else 1
            array = np.frombuffer(payload, dtype=dtype, count=count,
                                  offset=entry['offset']).reshape(entry['shape']).copy()
            group, name = entry['name'].split(':', 1)
            if group == 'weight':
                weights[name] = Tensor(array, requires_grad=True, name=name)
            else:
                buffers[name] = array

        params = ModelParams(config=ModelConfig.from_dict(manifest['config']), seed=manifest['seed'],
                             weights=weights, buffers=buffers, kind=manifest['kind'])
        return params, manifest.get('metadata', {})
