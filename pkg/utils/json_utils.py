"""
File: json_utils.py
Author: Equipe Data Analytics
Date: 2026-09-02
Version: 3.0
Description: Utilitários para carregamento de configurações JSON (validadas com
             pydantic), leitura/escrita de JSON e JSON-lines com precisão total,
             escrita de tabelas CSV e validação de schema de DataFrames e de
             relatórios.
"""

import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Generator, Iterable, Iterator, List, Optional, Set, Type, TypeVar, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError, field_validator

from utils.logging_utils import Log

logger = Log.get_logger(__name__)

ModelT = TypeVar('ModelT', bound=BaseModel)
PathLike = Union[str, Path]

CSV_FLOAT_FORMAT = '%.17g'


class JsonErrorType(Enum):
    """Tipos de erros que podem ocorrer durante processamento de JSON."""
    FILE_NOT_FOUND = 'file_not_found'
    PARSE_ERROR = 'parse_error'
    PERMISSION_ERROR = 'permission_error'
    VALIDATION_ERROR = 'validation_error'
    UNEXPECTED_ERROR = 'unexpected_error'


class InvalidJsonError(Exception):
    """Exceção lançada quando um JSON não pode ser lido ou não atende à estrutura esperada."""

    def __init__(self, message: str, error_type: JsonErrorType = JsonErrorType.VALIDATION_ERROR):
        super().__init__(message)
        self.error_type = error_type


class ColumnConfig(BaseModel):
    """Configuração de uma coluna (ou seção de relatório) no schema."""
    name: str
    type: str = 'string'
    required: bool = True
    description: Optional[str] = None
    item_keys: Optional[List[str]] = None


class TableSchema(BaseModel):
    """Schema de uma tabela ou documento de saída."""
    table_name: Optional[str] = None
    columns: List[ColumnConfig]

    @field_validator('columns')
    @classmethod
    def validate_columns(cls, v: List[ColumnConfig]) -> List[ColumnConfig]:
        if not v:
            raise ValueError('A lista de colunas não pode estar vazia')
        return v


def load_json(path: PathLike) -> Any:
    """
    Carrega um arquivo JSON sem validação de estrutura.

    Raises:
        InvalidJsonError: arquivo ausente, sem permissão ou com JSON inválido
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    except FileNotFoundError as e:
        logger.error(
            'Arquivo JSON não encontrado',
            extra={'path': str(path), 'error_type': JsonErrorType.FILE_NOT_FOUND.value}
        )
        raise InvalidJsonError(f"Arquivo não encontrado: '{path}'", JsonErrorType.FILE_NOT_FOUND) from e

    except json.JSONDecodeError as e:
        logger.error(
            'Erro de parsing no JSON',
            extra={
                'path': str(path),
                'error_type': JsonErrorType.PARSE_ERROR.value,
                'line': e.lineno,
                'position': e.colno
            }
        )
        raise InvalidJsonError(
            f"JSON inválido em '{path}' (linha {e.lineno}, coluna {e.colno}): {e.msg}",
            JsonErrorType.PARSE_ERROR
        ) from e

    except PermissionError as e:
        logger.error(
            'Permissão negada ao acessar arquivo',
            extra={'path': str(path), 'error_type': JsonErrorType.PERMISSION_ERROR.value}
        )
        raise InvalidJsonError(f"Permissão negada: '{path}'", JsonErrorType.PERMISSION_ERROR) from e


def load_config(config_path: PathLike, model: Type[ModelT]) -> ModelT:
    """
    Carrega um arquivo JSON de configuração e valida com o modelo pydantic informado.

    Args:
        config_path: Caminho para o JSON de configuração.
        model: Classe pydantic que descreve a configuração.

    Returns:
        Instância validada do modelo.

    Raises:
        InvalidJsonError: arquivo ausente, JSON inválido ou estrutura inválida.
    """
    data = load_json(config_path)
    try:
        return model.model_validate(data)

    except ValidationError as e:
        logger.error(
            'Validação de estrutura falhou',
            extra={'path': str(config_path), 'error_type': JsonErrorType.VALIDATION_ERROR.value}
        )
        raise InvalidJsonError(f"Configuração inválida em '{config_path}': {e}") from e


def load_schema(schema_path: PathLike) -> TableSchema:
    """Carrega um schema de colunas de `schemas/`."""
    return load_config(schema_path, TableSchema)


def to_jsonable(value: Any) -> Any:
    """
    Converte recursivamente tipos numpy/pydantic em tipos JSON nativos.
    Infinito vira a string 'inf' ('-inf'), NaN vira null.
    """
    if isinstance(value, BaseModel):
        return to_jsonable(value.model_dump(mode='python'))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        if math.isnan(f):
            return None
        if math.isinf(f):
            return 'inf' if f > 0 else '-inf'
        return f
    return value


def write_json(path: PathLike, payload: Any) -> Path:
    """Escreve JSON indentado (UTF-8, newline final)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_jsonable(payload), f, indent=2, ensure_ascii=False, allow_nan=False)
        f.write('\n')
    return path


def write_jsonl(path: PathLike, records: Iterable[Dict[str, Any]]) -> int:
    """
    Escreve um registro JSON por linha. Floats usam repr (precisão total).

    Returns:
        Número de registros escritos
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, 'w', encoding='utf-8') as f:
        for record in records:
            f.write(json.dumps(to_jsonable(record), separators=(',', ':'), allow_nan=False))
            f.write('\n')
            count += 1
    return count


def iter_jsonl(path: PathLike) -> Iterator[Dict[str, Any]]:
    """
    Itera registros de um arquivo JSON-lines, ignorando linhas vazias.

    Raises:
        InvalidJsonError: arquivo ausente ou linha inválida
    """
    try:
        f = open(path, 'r', encoding='utf-8')
    except FileNotFoundError as e:
        raise InvalidJsonError(f"Arquivo não encontrado: '{path}'", JsonErrorType.FILE_NOT_FOUND) from e

    with f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise InvalidJsonError(
                    f"Linha {line_no} inválida em '{path}': {e.msg}",
                    JsonErrorType.PARSE_ERROR
                ) from e


def write_table_csv(df: pd.DataFrame, path: PathLike, validator: Optional['ConfigValidator'] = None) -> Path:
    """
    Escreve uma tabela CSV com cabeçalho, floats em '%.17g' e infinito como 'inf'.

    Raises:
        InvalidJsonError: se o DataFrame não atender ao schema informado
    """
    if validator is not None:
        errors = validator.validate_dataframe(df)
        if errors:
            raise InvalidJsonError(f"Tabela '{path}' fora do schema: {'; '.join(errors)}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, header=True, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
    return path


def read_table_csv(path: PathLike) -> pd.DataFrame:
    """Lê uma tabela CSV mantendo scene_id como texto."""
    if not Path(path).exists():
        raise InvalidJsonError(f"Arquivo não encontrado: '{path}'", JsonErrorType.FILE_NOT_FOUND)
    return pd.read_csv(path, dtype={'scene_id': str})


def extract_column_specs(schema: TableSchema) -> Dict[str, Dict[str, Any]]:
    """Especificações de colunas indexadas por nome."""
    return {col.name: col.model_dump() for col in schema.columns}


def _check_column_type(series: pd.Series, expected_type: str) -> bool:
    """
    Verifica se o tipo de dados de uma coluna é compatível com o esperado.

    Args:
        series: Série do pandas representando uma coluna.
        expected_type: 'string', 'integer', 'float', 'number' ou 'boolean'.
    """
    if expected_type == 'string':
        return series.dtype == 'object' or pd.api.types.is_string_dtype(series)

    elif expected_type == 'integer':
        return pd.api.types.is_integer_dtype(series)

    elif expected_type in ('float', 'number'):
        return pd.api.types.is_float_dtype(series) or pd.api.types.is_integer_dtype(series)

    elif expected_type == 'boolean':
        return pd.api.types.is_bool_dtype(series)

    return True


_JSON_TYPES = {
    'object': (dict,),
    'array': (list,),
    'string': (str,),
    'boolean': (bool,),
    'integer': (int,),
    'number': (int, float, str),
}


def _check_value_type(value: Any, expected_type: str) -> bool:
    """Tipo de um valor JSON; 'number' aceita a string 'inf'."""
    if expected_type == 'number' and isinstance(value, str):
        return value in ('inf', '-inf')
    if expected_type in ('integer', 'number') and isinstance(value, bool):
        return False
    allowed = _JSON_TYPES.get(expected_type)
    return True if allowed is None else isinstance(value, allowed)


def iter_validation_errors(df: pd.DataFrame, schema: TableSchema) -> Generator[str, None, None]:
    """
    Gera erros de validação de colunas (presença e tipo).

    Yields:
        Mensagens de erro encontradas durante a validação.
    """
    for col_name, col_specs in extract_column_specs(schema).items():
        if col_name not in df.columns:
            if col_specs.get('required', True):
                yield f"Coluna obrigatória ausente: '{col_name}'"
            continue

        col_type = col_specs.get('type')
        if col_type and len(df) > 0 and not _check_column_type(df[col_name], col_type):
            yield f"Tipo de dados incompatível na coluna '{col_name}'. Esperado: {col_type}"


def validate_schema(df: pd.DataFrame, schema: TableSchema) -> List[str]:
    """Lista de erros de validação, vazia se não houver problemas."""
    return list(iter_validation_errors(df, schema))


class ConfigValidator:
    """Validação de tabelas e documentos contra um schema em `schemas/`."""

    def __init__(self, schema_path: PathLike):
        """
        Args:
            schema_path: Caminho para o arquivo de schema JSON.
        """
        self._schema_path = schema_path
        self._schema: Optional[TableSchema] = None
        self._columns_cache: Optional[Dict[str, Dict[str, Any]]] = None

    @property
    def schema(self) -> TableSchema:
        if self._schema is None:
            self._schema = load_schema(self._schema_path)
        return self._schema

    @property
    def columns(self) -> Dict[str, Dict[str, Any]]:
        if self._columns_cache is None:
            self._columns_cache = extract_column_specs(self.schema)
        return self._columns_cache

    def validate_dataframe(self, df: pd.DataFrame) -> List[str]:
        """
        Valida um DataFrame contra o schema carregado.

        Returns:
            Lista de erros de validação, vazia se não houver problemas.
        """
        return validate_schema(df, self.schema)

    def validate_document(self, document: Dict[str, Any]) -> List[str]:
        """
        Valida as seções de primeiro nível de um documento JSON (ex.: report.json).

        Returns:
            Lista de erros de validação, vazia se não houver problemas.
        """
        errors = []
        for name, specs in self.columns.items():
            if name not in document:
                if specs.get('required', True):
                    errors.append(f"Seção obrigatória ausente: '{name}'")
                continue
            expected = specs.get('type')
            value = document[name]
            if value is None:
                continue
            if expected and not _check_value_type(value, expected):
                errors.append(f"Tipo incompatível na seção '{name}'. Esperado: {expected}")
                continue
            keys = specs.get('item_keys')
            if keys and isinstance(value, list):
                for i, item in enumerate(value):
                    missing = [k for k in keys if not isinstance(item, dict) or k not in item]
                    if missing:
                        errors.append(f"Item {i} da seção '{name}' sem as chaves {missing}")
                        break
        return errors

    def get_required_columns(self) -> Set[str]:
        """Conjunto de colunas obrigatórias."""
        return {
            col_name for col_name, specs in self.columns.items()
            if specs.get('required', True)
        }
