"""
File: logging_utils.py
Author: Equipe Data Analytics
Date: 2026-09-02
Version: 2.0
Description: Logging centralizado do pipeline scenewatch. Singleton que configura
             o logger raiz uma única vez (console + arquivo rotativo), contexto por
             thread, mensagens estruturadas em JSON e um gerenciador de contexto
             para cronometrar e registrar cada etapa do pipeline.
"""

import os
import sys
import json
import time
import threading
import logging
from enum import IntEnum
from datetime import datetime
from pathlib import Path
from contextlib import contextmanager
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, Iterator, Optional

from dotenv import load_dotenv


load_dotenv(dotenv_path=Path(__file__).resolve().parents[1] / '.env')


class LogLevel(IntEnum):
    """
    Níveis de severidade, alinhados com o módulo logging padrão.
    """
    DEBUG = logging.DEBUG
    INFO = logging.INFO
    WARNING = logging.WARNING
    ERROR = logging.ERROR
    CRITICAL = logging.CRITICAL
    NONE = logging.CRITICAL + 10

    @classmethod
    def from_name(cls, name: Optional[str], default: 'LogLevel' = None) -> 'LogLevel':
        """Converte um nome ('info', 'DEBUG', ...) no nível correspondente."""
        if not name:
            return default if default is not None else cls.INFO
        try:
            return cls[name.strip().upper()]
        except KeyError:
            return default if default is not None else cls.INFO


class StageTimer:
    """Cronômetro de uma etapa; `seconds` fica disponível ao sair do bloco."""

    def __init__(self, name: str):
        self.name = name
        self.started_at = time.perf_counter()
        self.seconds: float = 0.0
        self.failed = False

    def stop(self) -> float:
        self.seconds = time.perf_counter() - self.started_at
        return self.seconds


class Log:
    """
    Classe singleton para gerenciamento centralizado de logs.
    Todos os módulos usam `Log.get_logger(__name__)`.
    """
    _instance = None
    _context_data = threading.local()

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super(Log, cls).__new__(cls)
            cls._instance._initialize()
        return cls._instance

    def _initialize(self) -> None:
        """Inicializa o singleton com valores padrão (lidos do ambiente quando houver)."""
        self._level = LogLevel.from_name(os.getenv('SCENEWATCH_LOG_LEVEL'), LogLevel.INFO)
        self._use_console = True
        self._log_file_path: Optional[str] = None
        self._max_size_mb: Optional[float] = 5.0
        self._format_string = '%(asctime)s - %(name)s - %(levelname)s - [%(filename)s:%(lineno)d] - %(message)s'
        self._console_handler: Optional[logging.Handler] = None
        self._file_handler: Optional[logging.Handler] = None
        self._configured = False
        self._lock = threading.Lock()

    @staticmethod
    def _get_instance() -> 'Log':
        return Log()

    @staticmethod
    def _configure() -> None:
        """Configura o logger raiz (idempotente)."""
        instance = Log._get_instance()

        with instance._lock:
            root_logger = logging.getLogger()
            root_logger.setLevel(instance._level)

            for handler in (instance._console_handler, instance._file_handler):
                if handler is not None and handler in root_logger.handlers:
                    root_logger.removeHandler(handler)

            formatter = logging.Formatter(instance._format_string)

            instance._console_handler = None
            if instance._use_console:
                instance._console_handler = logging.StreamHandler(sys.stderr)
                instance._console_handler.setFormatter(formatter)
                root_logger.addHandler(instance._console_handler)

            instance._file_handler = None
            if instance._log_file_path:
                max_bytes = int(instance._max_size_mb * 1024 * 1024) if instance._max_size_mb else 0
                instance._file_handler = RotatingFileHandler(
                    instance._log_file_path,
                    mode='a',
                    maxBytes=max_bytes,
                    backupCount=5,
                    encoding='utf-8'
                )
                instance._file_handler.setFormatter(formatter)
                root_logger.addHandler(instance._file_handler)

            instance._configured = True

    @staticmethod
    def get_logger(name: str) -> logging.Logger:
        """
        Obtém um logger para o módulo especificado.

        Args:
            name: Nome do módulo, normalmente o valor de __name__

        Returns:
            Logger do módulo (o logger raiz é configurado na primeira chamada)
        """
        instance = Log._get_instance()
        if not instance._configured:
            Log._configure()
        return logging.getLogger(name)

    @staticmethod
    def set_level(level: LogLevel) -> None:
        """Define o nível mínimo de severidade para todos os loggers."""
        instance = Log._get_instance()
        instance._level = level
        logging.getLogger().setLevel(level)

    @staticmethod
    def set_console_output(enabled: bool) -> None:
        """Habilita ou desabilita a saída para o console."""
        instance = Log._get_instance()
        if instance._use_console == enabled and instance._configured:
            return
        instance._use_console = enabled
        Log._configure()

    @staticmethod
    def set_log_file(file_path: str, append: bool = True, max_size_mb: Optional[float] = 5.0) -> bool:
        """
        Configura o arquivo de log com rotação por tamanho.

        Args:
            file_path: Caminho para o arquivo de log
            append: Se False, trunca o arquivo existente
            max_size_mb: Tamanho máximo antes da rotação (None desativa a rotação)

        Returns:
            True se o arquivo foi configurado, False caso contrário
        """
        instance = Log._get_instance()
        try:
            log_dir = os.path.dirname(file_path)
            if log_dir:
                os.makedirs(log_dir, exist_ok=True)
            if not append and os.path.exists(file_path):
                open(file_path, 'w', encoding='utf-8').close()

            instance._log_file_path = file_path
            instance._max_size_mb = max_size_mb
            Log._configure()
            return True

        except OSError as e:
            sys.stderr.write(f"Erro ao abrir arquivo de log {file_path}: {e}\n")
            instance._log_file_path = None
            return False

    @staticmethod
    def get_log_file_path() -> Optional[str]:
        return Log._get_instance()._log_file_path

    @staticmethod
    def default_log_dir() -> Path:
        """Diretório de logs (SCENEWATCH_LOG_DIR ou ./logs)."""
        return Path(os.getenv('SCENEWATCH_LOG_DIR', 'logs'))

    @staticmethod
    def configure_for_command(command: str, level: Optional[LogLevel] = None) -> Path:
        """
        Configuração padrão de um subcomando: console + arquivo diário
        `<comando>_<AAAAMMDD>.log` no diretório de logs.
        """
        if level is not None:
            Log.set_level(level)
        log_dir = Log.default_log_dir()
        hoje_str = datetime.now().strftime('%Y%m%d')
        log_path = log_dir / f"scenewatch_{command}_{hoje_str}.log"
        Log.set_log_file(str(log_path), append=True, max_size_mb=10.0)
        return log_path

    # Contexto por thread
    @staticmethod
    def set_context(key: str, value: Any) -> None:
        if not hasattr(Log._context_data, 'data'):
            Log._context_data.data = {}
        Log._context_data.data[key] = value

    @staticmethod
    def clear_context() -> None:
        Log._context_data.data = {}

    @staticmethod
    def get_context() -> Dict[str, Any]:
        if not hasattr(Log._context_data, 'data'):
            Log._context_data.data = {}
        return Log._context_data.data.copy()

    @staticmethod
    def structured(level: LogLevel, name: str = 'scenewatch', **fields: Any) -> None:
        """
        Registra uma mensagem estruturada (uma linha JSON) com o contexto da thread.

        Args:
            level: Nível de severidade
            name: Nome do logger
            **fields: Pares chave-valor a serem incluídos
        """
        payload = dict(fields)
        context = Log.get_context()
        if context:
            payload['context'] = context
        Log.get_logger(name).log(level, json.dumps(payload, default=str, sort_keys=True))

    @staticmethod
    @contextmanager
    def stage(name: str, logger: Optional[logging.Logger] = None) -> Iterator[StageTimer]:
        """
        Cronometra uma etapa, registrando início, sucesso ou falha.

        Uso:
            with Log.stage('predict') as timer:
                ...
            timer.seconds
        """
        log = logger or Log.get_logger('scenewatch.stage')
        previous = Log.get_context().get('stage')
        Log.set_context('stage', name)
        timer = StageTimer(name)
        log.info(f"=== INICIANDO: {name} ===")
        try:
            yield timer
        except Exception:
            timer.failed = True
            timer.stop()
            log.error(f"=== FALHA: {name} ({timer.seconds:.2f}s) ===")
            raise
        else:
            timer.stop()
            log.info(f"=== SUCESSO: {name} ({timer.seconds:.2f}s) ===")
        finally:
            if previous is None:
                Log.get_context()
                Log._context_data.data.pop('stage', None)
            else:
                Log.set_context('stage', previous)
