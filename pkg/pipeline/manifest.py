"""
File: manifest.py
Author: Equipe Data Analytics
Date: 2026-09-22
Version: 1.0
Description: Layout do diretório de execução e manifesto com digests por etapa.
"""

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from utils.hash_utils import ZERO_DIGEST, generate_file_hash, generate_payload_hash
from utils.json_utils import ConfigValidator, load_json, write_json

TOOL_VERSION = '1.0.0'
ROOT_PATH = Path(__file__).resolve().parents[1]
SCHEMAS_DIR = ROOT_PATH / 'schemas'

SCENES_FILE = 'scenes.jsonl'
LABELS_FILE = 'labels.jsonl'
PREDS_FILE = 'preds.jsonl'
MODEL_FILE = 'model.bin'
TRAIN_LOG_FILE = 'train_log.csv'
SCORES_FILE = 'scores.csv'
FLAGS_DIR = 'flags'
PROXIES_FILE = 'proxies.csv'
EVAL_FILE = 'eval.json'
CLUSTERS_FILE = 'clusters.json'
BASELINES_FILE = 'baselines.json'
MANIFEST_FILE = 'manifest.json'
REPORT_FILE = 'report.json'
SUMMARY_FILE = 'summary.md'

SUCCESS = 'SUCESSO'
FAILURE = 'FALHA'


@dataclass
class StageRecord:
    name: str
    status: str
    seconds: float
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    error: Optional[str] = None


@dataclass
class RunManifest:
    config: Dict[str, Any]
    tool_version: str = TOOL_VERSION
    stages: List[StageRecord] = field(default_factory=list)

    @property
    def run_digest(self) -> str:
        """Digest sobre a configuração e os digests de saída; tempos ficam de fora."""
        return generate_payload_hash({
            'config': self.config,
            'outputs': {s.name: s.outputs for s in self.stages if s.status == SUCCESS},
        })

    @property
    def completed(self) -> bool:
        return bool(self.stages) and all(s.status == SUCCESS for s in self.stages)

    def stage(self, name: str) -> Optional[StageRecord]:
        return next((s for s in self.stages if s.name == name), None)

    def output_digests(self) -> Dict[str, Dict[str, str]]:
        return {s.name: dict(s.outputs) for s in self.stages}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'tool_version': self.tool_version,
            'run_digest': self.run_digest,
            'config': self.config,
            'stages': [asdict(s) for s in self.stages],
        }

    def save(self, run_dir: Path) -> Path:
        return write_json(Path(run_dir) / MANIFEST_FILE, self.to_dict())

    @classmethod
    def load(cls, run_dir: Path) -> 'RunManifest':
        data = load_json(Path(run_dir) / MANIFEST_FILE)
        return cls(
            config=data['config'],
            tool_version=data.get('tool_version', TOOL_VERSION),
            stages=[StageRecord(**s) for s in data.get('stages', [])],
        )


def file_digest(path: Path) -> str:
    return generate_file_hash(str(path)) if Path(path).exists() else ZERO_DIGEST


def flag_file_name(aggregator: str, contamination: float) -> str:
    return f"flags_{aggregator}_c{contamination:.2f}.csv"


def validator_for(name: str) -> ConfigValidator:
    """Validador do schema `schemas/schema_<name>.json`."""
    return ConfigValidator(SCHEMAS_DIR / f"schema_{name}.json")
