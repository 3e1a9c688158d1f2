"""
File: hash_utils.py
Author: Equipe Data Analytics
Date: 2026-09-02
Version: 2.0
Description: Funções auxiliares para digests SHA-256 de arquivos e arrays numpy,
             usados no manifesto de execução, e derivação determinística de
             sementes a partir da semente raiz do pipeline.
"""

import os
import json
import hashlib
import mimetypes
from datetime import datetime
from pathlib import Path
from typing import Any, Dict

import numpy as np

from utils.logging_utils import Log

logger = Log.get_logger(__name__)

ZERO_DIGEST = '0' * 64
LARGE_FILE_BYTES = 10 * 1024 * 1024
CHUNK_BYTES = 1024 * 1024


def derive_seed(root_seed: int, label: str) -> int:
    """
    Deriva uma semente filha de 32 bits a partir da semente raiz e de um rótulo de etapa.

    Args:
        root_seed: Semente raiz do pipeline
        label: Rótulo da etapa (ex.: 'synth', 'iforest/max/0.15')

    Returns:
        Semente inteira em [0, 2**32)
    """
    payload = f"{int(root_seed)}:{label}".encode('utf-8')
    return int.from_bytes(hashlib.sha256(payload).digest()[:4], 'big')


def generate_array_hash(array: np.ndarray) -> str:
    """
    Gera um SHA-256 sobre dtype, shape e bytes de um array (ordem C).

    Args:
        array: Array numpy

    Returns:
        Digest hexadecimal
    """
    arr = np.ascontiguousarray(array)
    sha = hashlib.sha256()
    sha.update(str(arr.dtype.str).encode('utf-8'))
    sha.update(json.dumps(list(arr.shape)).encode('utf-8'))
    sha.update(arr.tobytes())
    return sha.hexdigest()


def generate_payload_hash(payload: Any) -> str:
    """SHA-256 de um objeto serializável em JSON (chaves ordenadas)."""
    text = json.dumps(payload, sort_keys=True, default=str, separators=(',', ':'))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()


def generate_file_hash(filepath: str) -> str:
    """
    Gera um SHA-256 para o conteúdo de um arquivo.

    Args:
        filepath: Caminho do arquivo.

    Returns:
        Digest do conteúdo ou digest zerado em caso de erro.
    """
    try:
        size = os.path.getsize(filepath)
        if size < LARGE_FILE_BYTES:
            return generate_file_hash_small(filepath)
        return generate_file_hash_large(filepath)

    except OSError as e:
        logger.error(f"Erro ao calcular hash do arquivo {filepath}: {e}")
        return ZERO_DIGEST


def generate_file_hash_small(filepath: str) -> str:
    """Hash carregando todo o conteúdo em memória."""
    with open(filepath, 'rb') as f:
        return hashlib.sha256(f.read()).hexdigest()


def generate_file_hash_large(filepath: str) -> str:
    """Hash em chunks para arquivos grandes."""
    sha = hashlib.sha256()
    with open(filepath, 'rb') as f:
        for chunk in iter(lambda: f.read(CHUNK_BYTES), b''):
            sha.update(chunk)
    return sha.hexdigest()


def calculate_file_fingerprint(input_file: str) -> Dict[str, Any]:
    """
    Gera um fingerprint do arquivo para o manifesto (digest, tamanho e tipo).
    Não inclui datas, para que o manifesto seja reprodutível.

    Args:
        input_file: Caminho do arquivo.

    Returns:
        Dicionário com nome, digest, tamanho e tipo MIME.
    """
    file_path = Path(input_file)

    try:
        mime_type, _ = mimetypes.guess_type(str(file_path))
        return {
            'filename': file_path.name,
            'size_bytes': file_path.stat().st_size,
            'mime_type': mime_type or 'unknown',
            'file_hash': generate_file_hash(str(file_path)),
        }

    except OSError as e:
        logger.warning(f"Erro ao calcular fingerprint do arquivo '{input_file}': {e}")
        return {
            'filename': file_path.name,
            'size_bytes': None,
            'mime_type': 'unknown',
            'file_hash': ZERO_DIGEST,
            'error': str(e),
            'checked_at': datetime.now().isoformat(),
        }
