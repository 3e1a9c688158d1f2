"""
File: predictor.py
Author: Equipe Data Analytics
Date: 2026-09-08
Version: 1.0
Description: Preditores de trajetória multiagente que geram o sinal de resíduo:
             baseline de velocidade constante e Transformer encoder-decoder em
             escala reduzida treinado com MSE ponderado (posição + velocidade).
             Inclui ADE/FDE, verificação de gradiente por diferenças finitas,
             persistência versionada do modelo e das predições.
"""

import copy
import pickle
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
from pydantic import BaseModel, Field, model_validator
from torch import nn

from scenes.scene_model import (
    DT, N_FEATURES, N_SLOTS, N_STEPS, NormStats, SceneTensor, SplitSpec, fit_norm, split, stack_scenes,
)
from utils.json_utils import iter_jsonl, write_jsonl, write_table_csv
from utils.logging_utils import Log

logger = Log.get_logger(__name__)

MODEL_FORMAT_VERSION = 1
CV_WINDOW = 5
PathLike = Union[str, Path]


class PredictorError(Exception):
    """Erro base dos preditores."""


class ShapeMismatchError(PredictorError):
    """Predição e alvo com shapes diferentes."""


class NonFiniteLossError(PredictorError):
    """Perda não finita durante o treino."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"Perda não finita ({value}) na época {epoch}, lote {batch}")
        self.epoch = epoch
        self.batch = batch


class EmptyPredictionsError(PredictorError):
    """Nenhuma predição (ou nenhum agente presente) para avaliar."""


class ModelFormatError(PredictorError):
    """Arquivo de modelo ilegível ou de versão incompatível."""


class PredictorConfig(BaseModel):
    """Hiperparâmetros do Transformer e do treino."""
    t_enc: int = 25
    t_pred: int = 25
    label_start: int = 15
    label_end: int = 25
    d_model: int = Field(default=32, ge=1)
    n_layers: int = Field(default=2, ge=1)
    n_heads: int = Field(default=2, ge=1)
    dim_feedforward: int = Field(default=64, ge=1)
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0)
    lambda_pos: float = Field(default=1.0, ge=0.0)
    lambda_vel: float = Field(default=0.5, ge=0.0)
    lr: float = Field(default=1e-3, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    lr_step: int = Field(default=20, ge=1)
    lr_gamma: float = Field(default=0.1, gt=0.0)
    batch: int = Field(default=32, ge=1)
    epochs: int = Field(default=50, ge=1)
    patience: int = Field(default=10, ge=1)
    seed: int = 42

    @model_validator(mode='after')
    def validate_shapes(self) -> 'PredictorConfig':
        if self.t_enc + self.t_pred != N_STEPS:
            raise ValueError(f"t_enc + t_pred deve ser {N_STEPS}")
        if self.d_model % self.n_heads != 0:
            raise ValueError('d_model deve ser divisível por n_heads')
        if not 0 <= self.label_start < self.label_end <= self.t_enc:
            raise ValueError('janela de rótulos deve estar dentro do histórico')
        return self

    @property
    def n_label(self) -> int:
        return self.label_end - self.label_start


@dataclass(frozen=True)
class PredictionResult:
    scene_id: str
    predicted: np.ndarray
    actual: np.ndarray
    present: np.ndarray

    def __post_init__(self):
        predicted = np.array(self.predicted, dtype=float)
        actual = np.array(self.actual, dtype=float)
        present = np.array(self.present, dtype=bool)
        if predicted.shape != actual.shape or predicted.ndim != 3 or predicted.shape[1:] != (N_SLOTS, N_FEATURES):
            raise ShapeMismatchError(
                f"{self.scene_id}: predicted {predicted.shape} vs actual {actual.shape}"
            )
        if present.shape != (N_SLOTS,):
            raise ShapeMismatchError(f"{self.scene_id}: máscara {present.shape}")
        predicted[:, ~present, :] = 0.0
        actual[:, ~present, :] = 0.0
        for arr in (predicted, actual, present):
            arr.flags.writeable = False
        object.__setattr__(self, 'predicted', predicted)
        object.__setattr__(self, 'actual', actual)
        object.__setattr__(self, 'present', present)

    @property
    def horizon(self) -> int:
        return int(self.predicted.shape[0])

    def to_record(self) -> Dict:
        return {
            'scene_id': self.scene_id,
            'present': [bool(p) for p in self.present],
            'predicted': self.predicted.tolist(),
            'actual': self.actual.tolist(),
        }

    @classmethod
    def from_record(cls, record: Dict) -> 'PredictionResult':
        return cls(
            scene_id=str(record['scene_id']),
            predicted=np.asarray(record['predicted'], dtype=float),
            actual=np.asarray(record['actual'], dtype=float),
            present=np.asarray(record['present'], dtype=bool),
        )


@dataclass
class TrainLog:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_ade: List[float] = field(default_factory=list)
    val_fde: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    @property
    def best_val(self) -> float:
        return float(min(self.val_loss)) if self.val_loss else float('inf')

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'epoch': np.arange(1, len(self.train_loss) + 1),
            'train_loss': self.train_loss,
            'val_loss': self.val_loss,
            'val_ade': self.val_ade,
            'val_fde': self.val_fde,
            'lr': self.lr,
        })

    def save_csv(self, path: PathLike) -> Path:
        return write_table_csv(self.to_frame(), path)


def predict_cv(scene: SceneTensor, t_enc: int = 25) -> PredictionResult:
    """
    Baseline de velocidade constante: cada agente presente segue a partir da
    última posição observada com a velocidade média dos últimos 5 quadros
    observados; v̂ é a média de v nesses quadros, mantida constante.
    """
    history = scene.values[:t_enc]
    future = scene.values[t_enc:]
    horizon = future.shape[0]

    last = history[-1]
    velocity_xy = (history[-1, :, :2] - history[-1 - CV_WINDOW, :, :2]) / (CV_WINDOW * DT)
    speed = history[-CV_WINDOW:, :, 2].mean(axis=0)

    steps = (np.arange(1, horizon + 1, dtype=float) * DT)[:, None, None]
    predicted = np.empty_like(future)
    predicted[:, :, :2] = last[None, :, :2] + steps * velocity_xy[None, :, :]
    predicted[:, :, 2] = speed[None, :]

    return PredictionResult(scene.scene_id, predicted, future, scene.present)


def predict_cv_all(scenes: Sequence[SceneTensor], threads: int = 1) -> List[PredictionResult]:
    """predict_cv sobre uma coleção, preservando a ordem."""
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        return list(executor.map(predict_cv, scenes))


def _as_list(preds: Union[PredictionResult, Iterable[PredictionResult]]) -> List[PredictionResult]:
    return [preds] if isinstance(preds, PredictionResult) else list(preds)


def loss(pred: Union[PredictionResult, Iterable[PredictionResult]], cfg: Optional[PredictorConfig] = None) -> float:
    """
    MSE ponderado: média, sobre os pares (agente presente, passo), de
    λpos·((x̂−x)²+(ŷ−y)²) + λvel·(v̂−v)².

    Raises:
        ShapeMismatchError: horizontes diferentes entre as predições
    """
    cfg = cfg or PredictorConfig()
    preds = _as_list(pred)
    total, count = 0.0, 0
    horizon = preds[0].horizon if preds else 0
    for p in preds:
        if p.horizon != horizon:
            raise ShapeMismatchError(f"{p.scene_id}: horizonte {p.horizon} != {horizon}")
        diff = p.predicted[:, p.present, :] - p.actual[:, p.present, :]
        per_entry = cfg.lambda_pos * (diff[..., 0] ** 2 + diff[..., 1] ** 2) + cfg.lambda_vel * diff[..., 2] ** 2
        total += float(per_entry.sum())
        count += per_entry.size
    return total / count if count else 0.0


def weighted_mse(pred: torch.Tensor, target: torch.Tensor, present: torch.Tensor,
                 cfg: PredictorConfig) -> torch.Tensor:
    """Versão em tensores de `loss` para (B, T, 7, 3) com máscara (B, 7)."""
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"pred {tuple(pred.shape)} vs target {tuple(target.shape)}")
    mask = present.to(pred.dtype)[:, None, :].expand(pred.shape[0], pred.shape[1], pred.shape[2])
    diff = pred - target
    per_entry = cfg.lambda_pos * (diff[..., 0] ** 2 + diff[..., 1] ** 2) + cfg.lambda_vel * diff[..., 2] ** 2
    return (per_entry * mask).sum() / mask.sum().clamp_min(1.0)


def evaluate_ade_fde(preds: Iterable[PredictionResult]) -> Tuple[float, float]:
    """
    ADE: média de ‖p̂−p‖ sobre agentes presentes e passos; FDE: idem no último passo.

    Raises:
        EmptyPredictionsError: sem predições ou sem agentes presentes
    """
    preds = list(preds)
    if not preds:
        raise EmptyPredictionsError("evaluate_ade_fde sem predições")

    disp_sum, disp_count, final_sum, final_count = 0.0, 0, 0.0, 0
    for p in preds:
        dist = np.linalg.norm(p.predicted[:, p.present, :2] - p.actual[:, p.present, :2], axis=-1)
        disp_sum += float(dist.sum())
        disp_count += dist.size
        final_sum += float(dist[-1].sum()) if dist.size else 0.0
        final_count += dist.shape[1] if dist.size else 0

    if disp_count == 0:
        raise EmptyPredictionsError("evaluate_ade_fde sem agentes presentes")
    return disp_sum / disp_count, final_sum / final_count


class SceneTransformer(nn.Module):
    """
    Encoder-decoder sobre a cena achatada por agente (7 papéis x 3 features = 21).

    O encoder aplica self-attention nos 25 passos de histórico. O decoder recebe
    os quadros da janela de rótulos como contexto mais 25 consultas aprendidas
    (uma por passo futuro) e usa self-attention e cross-attention com a memória
    do encoder. Todos os passos futuros saem de uma vez, como deslocamento em
    relação ao último estado observado.
    """

    def __init__(self, cfg: PredictorConfig):
        super().__init__()
        self.cfg = cfg
        n_in = N_SLOTS * N_FEATURES
        d = cfg.d_model

        self.input_proj = nn.Linear(n_in, d)
        self.enc_pos = nn.Parameter(torch.randn(cfg.t_enc, d) * 0.02)
        self.dec_pos = nn.Parameter(torch.randn(cfg.n_label + cfg.t_pred, d) * 0.02)
        self.queries = nn.Parameter(torch.randn(cfg.t_pred, d) * 0.02)

        enc_layer = nn.TransformerEncoderLayer(
            d, cfg.n_heads, cfg.dim_feedforward, cfg.dropout,
            activation='gelu', batch_first=True, norm_first=True
        )
        self.encoder = nn.TransformerEncoder(enc_layer, cfg.n_layers, enable_nested_tensor=False)
        dec_layer = nn.TransformerDecoderLayer(
            d, cfg.n_heads, cfg.dim_feedforward, cfg.dropout,
            activation='gelu', batch_first=True, norm_first=True
        )
        self.decoder = nn.TransformerDecoder(dec_layer, cfg.n_layers)
        self.head = nn.Linear(d, n_in)
        self.norm_stats: Optional[NormStats] = None

    def forward(self, history: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
        """
        Args:
            history: (B, t_enc, 7, 3) normalizado, ausentes zerados
            present: (B, 7) booleano

        Returns:
            (B, t_pred, 7, 3) normalizado, ausentes zerados
        """
        cfg = self.cfg
        batch = history.shape[0]
        mask = present.to(history.dtype)[:, None, :, None]
        history = history * mask
        flat = history.reshape(batch, cfg.t_enc, N_SLOTS * N_FEATURES)

        memory = self.encoder(self.input_proj(flat) + self.enc_pos)
        context = self.input_proj(flat[:, cfg.label_start:cfg.label_end])
        queries = self.queries.unsqueeze(0).expand(batch, -1, -1)
        target = torch.cat([context, queries], dim=1) + self.dec_pos
        decoded = self.decoder(target, memory)[:, cfg.n_label:]

        offsets = self.head(decoded).reshape(batch, cfg.t_pred, N_SLOTS, N_FEATURES)
        return (history[:, -1:, :, :] + offsets) * mask


def _tensors(scenes: Sequence[SceneTensor], stats: NormStats, cfg: PredictorConfig,
             dtype: torch.dtype = torch.float32) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    values, present = stack_scenes(scenes)
    normed = (values - stats.mean) / stats.std
    normed = np.where(present[:, None, :, None], normed, 0.0)
    history = torch.as_tensor(normed[:, :cfg.t_enc], dtype=dtype)
    future = torch.as_tensor(normed[:, cfg.t_enc:], dtype=dtype)
    return history, future, torch.as_tensor(present)


def _epoch_metrics(model: SceneTransformer, scenes: Sequence[SceneTensor], stats: NormStats,
                   cfg: PredictorConfig) -> Tuple[float, float, float]:
    history, future, present = _tensors(scenes, stats, cfg)
    model.eval()
    with torch.no_grad():
        out = model(history, present)
        val_loss = float(weighted_mse(out, future, present, cfg))
    preds = _to_results(scenes, out.numpy(), stats, cfg)
    ade, fde = evaluate_ade_fde(preds)
    return val_loss, ade, fde


def _to_results(scenes: Sequence[SceneTensor], normed_out: np.ndarray, stats: NormStats,
                cfg: PredictorConfig) -> List[PredictionResult]:
    results = []
    for scene, out in zip(scenes, normed_out):
        predicted = out.astype(float) * stats.std + stats.mean
        results.append(PredictionResult(scene.scene_id, predicted, scene.values[cfg.t_enc:], scene.present))
    return results


def train_transformer(train: Sequence[SceneTensor], val: Sequence[SceneTensor], cfg: PredictorConfig,
                      stats: NormStats) -> Tuple[SceneTransformer, TrainLog]:
    """
    Treina o Transformer com AdamW (lr com StepLR), lotes embaralhados com a
    semente e parada antecipada pela perda de validação. Sem cenas de
    validação, a perda de treino faz esse papel. Os pesos finais são os da
    melhor época.

    Raises:
        NonFiniteLossError: perda NaN/inf em algum lote
    """
    if not train:
        raise EmptyPredictionsError("train_transformer sem cenas de treino")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = SceneTransformer(cfg)
    model.norm_stats = stats
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    scheduler = torch.optim.lr_scheduler.StepLR(optimizer, step_size=cfg.lr_step, gamma=cfg.lr_gamma)

    history, future, present = _tensors(train, stats, cfg)
    n = history.shape[0]
    log = TrainLog()
    best_state = copy.deepcopy(model.state_dict())
    best_loss = float('inf')
    since_best = 0

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = torch.as_tensor(rng.permutation(n))
        epoch_loss, seen = 0.0, 0
        for batch_idx, start in enumerate(range(0, n, cfg.batch)):
            idx = order[start:start + cfg.batch]
            out = model(history[idx], present[idx])
            batch_loss = weighted_mse(out, future[idx], present[idx], cfg)
            if not torch.isfinite(batch_loss):
                logger.error(f"Perda não finita na época {epoch}, lote {batch_idx}")
                raise NonFiniteLossError(epoch, batch_idx, float(batch_loss))
            optimizer.zero_grad()
            batch_loss.backward()
            optimizer.step()
            epoch_loss += float(batch_loss) * len(idx)
            seen += len(idx)

        train_loss = epoch_loss / seen
        log.lr.append(float(optimizer.param_groups[0]['lr']))
        scheduler.step()

        if val:
            val_loss, ade, fde = _epoch_metrics(model, val, stats, cfg)
        else:
            val_loss, ade, fde = train_loss, float('nan'), float('nan')
        log.train_loss.append(train_loss)
        log.val_loss.append(val_loss)
        log.val_ade.append(ade)
        log.val_fde.append(fde)
        logger.info(
            f"Época {epoch}: treino={train_loss:.5f} validação={val_loss:.5f} ADE={ade:.3f} FDE={fde:.3f}"
        )

        if val_loss < best_loss:
            best_loss = val_loss
            best_state = copy.deepcopy(model.state_dict())
            log.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
        log.stopped_epoch = epoch
        if since_best >= cfg.patience:
            logger.info(f"Parada antecipada na época {epoch} (melhor época {log.best_epoch})")
            break

    model.load_state_dict(best_state)
    model.eval()
    return model, log


def fit_norm_and_train(scenes: Sequence[SceneTensor], spec: SplitSpec,
                       cfg: PredictorConfig) -> Tuple[SceneTransformer, TrainLog]:
    """Divide por ego, ajusta a normalização só no treino e treina."""
    train, val, _ = split(scenes, spec)
    stats = fit_norm(train)
    return train_transformer(train, val, cfg, stats)


def predict_transformer(model: SceneTransformer, scenes: Sequence[SceneTensor],
                        stats: Optional[NormStats] = None, batch_size: int = 256) -> List[PredictionResult]:
    """Inferência em lotes; predições desnormalizadas no referencial do ego."""
    stats = stats or model.norm_stats
    if stats is None:
        raise ModelFormatError("Modelo sem estatísticas de normalização")
    cfg = model.cfg
    model.eval()
    results: List[PredictionResult] = []
    with torch.no_grad():
        for start in range(0, len(scenes), batch_size):
            chunk = scenes[start:start + batch_size]
            history, _, present = _tensors(chunk, stats, cfg)
            out = model(history, present).numpy()
            results.extend(_to_results(chunk, out, stats, cfg))
    return results


def gradient_check(model: SceneTransformer, scenes: Sequence[SceneTensor], stats: NormStats,
                   eps: float = 1e-4) -> Dict[str, float]:
    """
    Compara o gradiente analítico da perda com diferenças finitas centrais em
    float64, para cada tensor de parâmetros.

    Returns:
        nome do parâmetro -> ‖g_a − g_n‖ / max(‖g_a‖ + ‖g_n‖, 1e-12)
    """
    checked = copy.deepcopy(model).double()
    checked.train()
    cfg = checked.cfg
    history, future, present = _tensors(scenes, stats, cfg, dtype=torch.float64)

    def objective() -> torch.Tensor:
        return weighted_mse(checked(history, present), future, present, cfg)

    checked.zero_grad()
    objective().backward()

    errors: Dict[str, float] = {}
    with torch.no_grad():
        for name, param in checked.named_parameters():
            analytic = param.grad.detach().clone()
            numeric = torch.zeros_like(param)
            flat, num_flat = param.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + eps
                plus = objective().item()
                flat[i] = original - eps
                minus = objective().item()
                flat[i] = original
                num_flat[i] = (plus - minus) / (2.0 * eps)
            denom = max(float(analytic.norm() + numeric.norm()), 1e-12)
            errors[name] = float((analytic - numeric).norm()) / denom

    worst = max(errors, key=errors.get)
    logger.info(f"Verificação de gradiente: pior tensor {worst} erro relativo {errors[worst]:.2e}")
    return errors


def save_model(path: PathLike, model: SceneTransformer, stats: Optional[NormStats] = None) -> Path:
    """Grava modelo versionado: format_version, config, estatísticas e tensores nomeados."""
    stats = stats or model.norm_stats
    if stats is None:
        raise ModelFormatError("Modelo sem estatísticas de normalização")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        'format_version': MODEL_FORMAT_VERSION,
        'config': model.cfg.model_dump(),
        'stats': stats.to_dict(),
        'state_dict': model.state_dict(),
    }
    torch.save(payload, path)
    logger.info(f"Modelo gravado em {path}")
    return path


def load_model(path: PathLike) -> SceneTransformer:
    """
    Raises:
        ModelFormatError: arquivo ilegível, campos ausentes ou versão diferente
    """
    try:
        payload = torch.load(Path(path), map_location='cpu', weights_only=True)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise ModelFormatError(f"Não foi possível ler o modelo {path}: {e}") from e

    missing = {'format_version', 'config', 'stats', 'state_dict'} - set(payload)
    if missing:
        raise ModelFormatError(f"Modelo {path} sem campos {sorted(missing)}")
    if payload['format_version'] != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"Versão {payload['format_version']} não suportada (esperado {MODEL_FORMAT_VERSION})"
        )

    model = SceneTransformer(PredictorConfig.model_validate(payload['config']))
    try:
        model.load_state_dict(payload['state_dict'])
    except RuntimeError as e:
        raise ModelFormatError(f"Tensores incompatíveis em {path}: {e}") from e
    model.norm_stats = NormStats.from_dict(payload['stats'])
    model.eval()
    return model


def save_predictions(path: PathLike, preds: Iterable[PredictionResult]) -> int:
    count = write_jsonl(path, (p.to_record() for p in preds))
    logger.info(f"{count} predições gravadas em {path}")
    return count


def load_predictions(path: PathLike) -> List[PredictionResult]:
    return [PredictionResult.from_record(record) for record in iter_jsonl(path)]
