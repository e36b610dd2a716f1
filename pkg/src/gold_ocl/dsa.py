"""
Disentangled Slot Attention

Iterative attention that refines K extrinsic slot vectors and K×C identity
logits against patch features. Intrinsic content comes from a global bank
of prototype representations, and a background slot at index 0 is attended
over but never updated.

The module also holds the two ablation mechanisms: plain slot attention
with undivided slots, and identity slot attention without a global bank.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import torch
import torch.nn.functional as F
from torch import nn

from .config import DsaConfig
from .exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

NoiseSource = Union[torch.Generator, "DsaNoise", None]


def sample_gumbel(shape: torch.Size, generator: Optional[torch.Generator] = None,
                  dtype: torch.dtype = torch.float32, device=None) -> torch.Tensor:
    """Draw i.i.d. Gumbel(0, 1) noise as the negative log of unit exponentials."""
    exponential = torch.empty(shape, dtype=dtype, device=device).exponential_(generator=generator)
    return -exponential.clamp_min(torch.finfo(dtype).tiny).log()


def gumbel_softmax_sample(
    gamma: torch.Tensor,
    tau: float,
    gumbel: Optional[torch.Tensor] = None,
    generator: Optional[torch.Generator] = None,
    hard: bool = False,
) -> torch.Tensor:
    """
    Relaxed categorical sample y = softmax((gamma + g) / tau).

    Args:
        gamma: Logits, categories on the last dimension
        tau: Temperature, strictly positive
        gumbel: Fixed Gumbel noise shaped like ``gamma``; drawn when omitted
        generator: Seeded source for drawn noise
        hard: Return the one-hot argmax with straight-through soft gradients

    Returns:
        Weights on the simplex, shaped like ``gamma``

    Raises:
        InvalidArgumentError: If tau is not positive
    """
    if not tau > 0:
        raise InvalidArgumentError(f"Gumbel-Softmax temperature must be positive, got {tau}")
    if gumbel is None:
        gumbel = sample_gumbel(gamma.shape, generator, gamma.dtype, gamma.device)
    y_soft = F.softmax((gamma + gumbel) / tau, dim=-1)
    if not hard:
        return y_soft
    y_hard = F.one_hot(y_soft.argmax(dim=-1), gamma.shape[-1]).to(y_soft.dtype)
    # soft minus its detached copy is exactly zero, so the value stays one-hot
    return y_hard + (y_soft - y_soft.detach())


class GlobalBank(nn.Module):
    """Learnable C×D_glo prototype matrix shared by all scenes, plus its projection f_glo."""

    def __init__(self, num_prototypes: int, glo_size: int, int_size: int):
        super().__init__()
        self.e_glo = nn.Parameter(torch.randn(num_prototypes, glo_size))
        self.f_glo = nn.Linear(glo_size, int_size, bias=False)

    @property
    def num_prototypes(self) -> int:
        return self.e_glo.shape[0]

    def projected(self) -> torch.Tensor:
        """Bank rows mapped into the intrinsic slot space, C×D_int."""
        return self.f_glo(self.e_glo)


@dataclass
class DsaNoise:
    """Injected noise for reproducible runs."""

    ext: torch.Tensor  # B×K×D_ext standard normal (B×K×D_slot for undivided slots)
    gamma: torch.Tensor  # B×K×C (B×K×D_int for the bank-free variant) standard normal
    gumbel: Optional[torch.Tensor] = None  # T×B×K×C Gumbel(0, 1)

    def permuted(self, order: torch.Tensor) -> "DsaNoise":
        """Reorder the object slots of every noise tensor."""
        return DsaNoise(
            ext=self.ext[:, order],
            gamma=self.gamma[:, order],
            gumbel=None if self.gumbel is None else self.gumbel[:, :, order],
        )


@dataclass
class SlotState:
    """Slot state at the start of one iteration, after sampling y."""

    s_ext: torch.Tensor
    gamma: torch.Tensor
    y: torch.Tensor
    s_int: torch.Tensor
    s_obj: torch.Tensor
    iteration: int


@dataclass
class AttentionInternals:
    a_tilde: torch.Tensor  # B×N×(K+1), softmax over slots
    w: torch.Tensor  # B×(K+1)×N, normalized over patches
    u: torch.Tensor  # B×(K+1)×D_slot
    slots_full: torch.Tensor  # B×(K+1)×D_slot, background at index 0


@dataclass
class DsaIteration:
    state: SlotState
    attention: AttentionInternals
    s_int: torch.Tensor  # updated intrinsic state
    s_ext: torch.Tensor  # updated extrinsic state
    gamma: torch.Tensor  # recomputed identity logits


@dataclass
class DsaOutput:
    gamma: torch.Tensor  # B×K×C
    s_ext: torch.Tensor  # B×K×D_ext
    s_int: torch.Tensor  # B×K×D_int, final intrinsic state
    trace: List[DsaIteration] = field(default_factory=list)

    @property
    def attention(self) -> torch.Tensor:
        """Per-patch slot weights of the last iteration."""
        return self.trace[-1].attention.a_tilde


class _SlotAttentionBase(nn.Module):
    """Shared attention machinery with a passive background slot at index 0."""

    def __init__(self, config: DsaConfig, input_size: int, bck_size: int):
        super().__init__()
        self.config = config
        self.num_slots = config.num_slots
        self.iterations = config.iterations
        self.int_size = config.int_size
        self.ext_size = config.ext_size
        self.slot_size = config.slot_size
        self.key_size = config.attention_size
        self.epsilon = config.epsilon

        self.norm_inputs = nn.LayerNorm(input_size) if config.pre_norm else nn.Identity()
        self.norm_slots = nn.LayerNorm(self.slot_size) if config.pre_norm else nn.Identity()
        self.project_q = nn.Linear(self.slot_size, self.key_size, bias=False)
        self.project_k = nn.Linear(input_size, self.key_size, bias=False)
        self.project_v = nn.Linear(input_size, self.slot_size, bias=False)
        self.bck_proj = nn.Linear(bck_size, self.slot_size, bias=False)

    @staticmethod
    def _gaussian_param(size: int) -> nn.Parameter:
        param = nn.Parameter(torch.empty(1, size))
        nn.init.xavier_uniform_(param)
        return param

    @staticmethod
    def _check_temperature(temperature: float) -> None:
        if not temperature > 0:
            raise InvalidArgumentError(f"DSA temperature must be positive, got {temperature}")

    @staticmethod
    def _draw(shape: Tuple[int, ...], generator: Optional[torch.Generator], like: torch.Tensor) -> torch.Tensor:
        return torch.randn(shape, generator=generator, dtype=like.dtype, device=like.device)

    def background_slot(self, s_bck: torch.Tensor) -> torch.Tensor:
        """Map the background vector into slot space, B×1×D_slot."""
        return self.bck_proj(s_bck)[:, None, :]

    def attention_step(self, s_sce: torch.Tensor, slots_full: torch.Tensor) -> AttentionInternals:
        """
        One round of competitive attention between patches and slots.

        Args:
            s_sce: B×N×D_img patch features
            slots_full: B×(K+1)×D_slot slots, background first

        Returns:
            Attention weights and pooled updates

        Raises:
            InvalidArgumentError: If there are no patches
        """
        if s_sce.shape[1] == 0:
            raise InvalidArgumentError("Attention needs at least one patch")
        inputs = self.norm_inputs(s_sce)
        k = self.project_k(inputs)
        v = self.project_v(inputs)
        q = self.project_q(self.norm_slots(slots_full))

        logits = torch.matmul(k, q.transpose(-1, -2)) / math.sqrt(self.key_size)
        a_tilde = F.softmax(logits, dim=-1)

        # weighted mean over patches
        w = a_tilde + self.epsilon
        w = (w / w.sum(dim=-2, keepdim=True)).transpose(-1, -2)
        u = torch.matmul(w, v)
        return AttentionInternals(a_tilde=a_tilde, w=w, u=u, slots_full=slots_full)


class DisentangledSlotAttention(_SlotAttentionBase):
    """Slot attention with separate extrinsic and identity updates against a global bank."""

    def __init__(self, config: DsaConfig, input_size: int, bck_size: int):
        super().__init__(config, input_size, bck_size)
        self.num_prototypes = config.num_prototypes

        self.ext_mu = self._gaussian_param(config.ext_size)
        self.ext_log_sigma = self._gaussian_param(config.ext_size)
        self.id_mu = self._gaussian_param(config.num_prototypes)
        self.id_log_sigma = self._gaussian_param(config.num_prototypes)

        self.gru_int = nn.GRUCell(config.int_size, config.int_size)
        self.gru_ext = nn.GRUCell(config.ext_size, config.ext_size)

    def init_slots(
        self, batch_size: int, noise: NoiseSource = None
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Draw initial extrinsic vectors and identity logits.

        Returns:
            Tuple of (s_ext B×K×D_ext, gamma B×K×C)
        """
        if isinstance(noise, DsaNoise):
            eps_ext, eps_id = noise.ext, noise.gamma
        else:
            eps_ext = self._draw((batch_size, self.num_slots, self.ext_size), noise, self.ext_mu)
            eps_id = self._draw((batch_size, self.num_slots, self.num_prototypes), noise, self.id_mu)
        s_ext = self.ext_mu + torch.exp(self.ext_log_sigma) * eps_ext
        gamma = self.id_mu + torch.exp(self.id_log_sigma) * eps_id
        return s_ext, gamma

    def update_slots(
        self, u: torch.Tensor, s_int: torch.Tensor, s_ext: torch.Tensor
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        GRU updates of the intrinsic and extrinsic states from pooled updates.

        The background row of ``u`` is discarded.

        Raises:
            InvalidArgumentError: If ``u`` does not split into (D_int, D_ext)
        """
        if u.shape[-1] != s_int.shape[-1] + s_ext.shape[-1]:
            raise InvalidArgumentError(
                f"Update size {u.shape[-1]} does not split into "
                f"{s_int.shape[-1]} + {s_ext.shape[-1]}"
            )
        if u.shape[1] != s_ext.shape[1] + 1:
            raise InvalidArgumentError("Updates must hold one row per object slot plus the background")
        batch, slots = s_ext.shape[:2]
        u_int, u_ext = u[:, 1:].split([s_int.shape[-1], s_ext.shape[-1]], dim=-1)
        s_int_next = self.gru_int(u_int.reshape(batch * slots, -1), s_int.reshape(batch * slots, -1))
        s_ext_next = self.gru_ext(u_ext.reshape(batch * slots, -1), s_ext.reshape(batch * slots, -1))
        return s_int_next.reshape(s_int.shape), s_ext_next.reshape(s_ext.shape)

    def recompute_gamma(self, s_int: torch.Tensor, bank: GlobalBank) -> torch.Tensor:
        """Scaled dot products of intrinsic states with the projected bank, B×K×C."""
        return _bank_logits(s_int, bank)

    def run_dsa(
        self,
        s_sce: torch.Tensor,
        s_bck: torch.Tensor,
        bank: Optional[GlobalBank],
        temperature: float,
        noise: NoiseSource = None,
        hard: bool = False,
    ) -> DsaOutput:
        """
        Run T iterations of disentangled slot attention.

        Args:
            s_sce: B×N×D_img patch features
            s_bck: B×D_bck background vectors
            bank: Global bank
            temperature: Gumbel-Softmax temperature
            noise: Seeded generator or injected noise
            hard: Straight-through one-hot identity samples

        Returns:
            Final identity logits and extrinsic vectors with the full trace
        """
        self._check_temperature(temperature)
        if bank is None:
            raise InvalidArgumentError("Disentangled slot attention needs a global bank")
        generator = noise if isinstance(noise, torch.Generator) else None
        fixed_gumbel = noise.gumbel if isinstance(noise, DsaNoise) else None

        s_ext, gamma = self.init_slots(s_sce.shape[0], noise)
        bck_slot = self.background_slot(s_bck)
        projected = bank.projected()

        trace: List[DsaIteration] = []
        s_int = None
        for t in range(self.iterations):
            gumbel = None if fixed_gumbel is None else fixed_gumbel[t]
            y = gumbel_softmax_sample(gamma, temperature, gumbel=gumbel, generator=generator, hard=hard)
            s_int = torch.matmul(y, projected)
            s_obj = torch.cat([s_int, s_ext], dim=-1)
            slots_full = torch.cat([bck_slot, s_obj], dim=1)

            attention = self.attention_step(s_sce, slots_full)
            s_int_next, s_ext_next = self.update_slots(attention.u, s_int, s_ext)
            gamma_next = self.recompute_gamma(s_int_next, bank)

            trace.append(DsaIteration(
                state=SlotState(s_ext=s_ext, gamma=gamma, y=y, s_int=s_int, s_obj=s_obj, iteration=t),
                attention=attention,
                s_int=s_int_next,
                s_ext=s_ext_next,
                gamma=gamma_next,
            ))
            s_int, s_ext, gamma = s_int_next, s_ext_next, gamma_next

        return DsaOutput(gamma=gamma, s_ext=s_ext, s_int=s_int, trace=trace)

    def forward(self, s_sce, s_bck, bank, temperature, noise=None, hard=False) -> DsaOutput:
        return self.run_dsa(s_sce, s_bck, bank, temperature, noise, hard)


class SlotAttention(_SlotAttentionBase):
    """
    Original slot attention with undivided slot vectors.

    Identity logits are computed after the loop from the intrinsic part of
    each slot against the bank.
    """

    def __init__(self, config: DsaConfig, input_size: int, bck_size: int):
        super().__init__(config, input_size, bck_size)
        self.slot_mu = self._gaussian_param(self.slot_size)
        self.slot_log_sigma = self._gaussian_param(self.slot_size)
        self.gru = nn.GRUCell(self.slot_size, self.slot_size)

    def run_dsa(self, s_sce, s_bck, bank, temperature, noise=None, hard=False) -> DsaOutput:
        self._check_temperature(temperature)
        if bank is None:
            raise InvalidArgumentError("Slot attention identities need a global bank")
        batch = s_sce.shape[0]
        if isinstance(noise, DsaNoise):
            eps = noise.ext
        else:
            eps = self._draw((batch, self.num_slots, self.slot_size), noise, self.slot_mu)
        slots = self.slot_mu + torch.exp(self.slot_log_sigma) * eps
        bck_slot = self.background_slot(s_bck)

        trace: List[DsaIteration] = []
        for t in range(self.iterations):
            s_int, s_ext = slots.split([self.int_size, self.ext_size], dim=-1)
            gamma = _bank_logits(s_int, bank)
            slots_full = torch.cat([bck_slot, slots], dim=1)
            attention = self.attention_step(s_sce, slots_full)
            updated = self.gru(
                attention.u[:, 1:].reshape(-1, self.slot_size), slots.reshape(-1, self.slot_size)
            ).reshape(slots.shape)
            s_int_next, s_ext_next = updated.split([self.int_size, self.ext_size], dim=-1)
            trace.append(DsaIteration(
                state=SlotState(
                    s_ext=s_ext, gamma=gamma, y=F.softmax(gamma, dim=-1),
                    s_int=s_int, s_obj=slots, iteration=t,
                ),
                attention=attention,
                s_int=s_int_next,
                s_ext=s_ext_next,
                gamma=_bank_logits(s_int_next, bank),
            ))
            slots = updated

        last = trace[-1]
        return DsaOutput(gamma=last.gamma, s_ext=last.s_ext, s_int=last.s_int, trace=trace)

    def forward(self, s_sce, s_bck, bank, temperature, noise=None, hard=False) -> DsaOutput:
        return self.run_dsa(s_sce, s_bck, bank, temperature, noise, hard)


class IdentitySlotAttention(_SlotAttentionBase):
    """
    Slot attention with separate extrinsic and free identity vectors, no bank.

    Identity logits are a fixed random projection of the identity vector
    into C bins, used only to read out discrete identities.
    """

    def __init__(self, config: DsaConfig, input_size: int, bck_size: int):
        super().__init__(config, input_size, bck_size)
        self.num_prototypes = config.num_prototypes
        self.ext_mu = self._gaussian_param(config.ext_size)
        self.ext_log_sigma = self._gaussian_param(config.ext_size)
        self.id_mu = self._gaussian_param(config.int_size)
        self.id_log_sigma = self._gaussian_param(config.int_size)
        self.gru_int = nn.GRUCell(config.int_size, config.int_size)
        self.gru_ext = nn.GRUCell(config.ext_size, config.ext_size)
        self.register_buffer("id_projection", torch.randn(config.num_prototypes, config.int_size))

    def identity_logits(self, s_id: torch.Tensor) -> torch.Tensor:
        return torch.matmul(s_id, self.id_projection.transpose(0, 1)) / math.sqrt(self.int_size)

    def run_dsa(self, s_sce, s_bck, bank=None, temperature=1.0, noise=None, hard=False) -> DsaOutput:
        self._check_temperature(temperature)
        batch = s_sce.shape[0]
        if isinstance(noise, DsaNoise):
            eps_ext, eps_id = noise.ext, noise.gamma
        else:
            eps_ext = self._draw((batch, self.num_slots, self.ext_size), noise, self.ext_mu)
            eps_id = self._draw((batch, self.num_slots, self.int_size), noise, self.id_mu)
        s_ext = self.ext_mu + torch.exp(self.ext_log_sigma) * eps_ext
        s_id = self.id_mu + torch.exp(self.id_log_sigma) * eps_id
        bck_slot = self.background_slot(s_bck)

        trace: List[DsaIteration] = []
        for t in range(self.iterations):
            s_obj = torch.cat([s_id, s_ext], dim=-1)
            slots_full = torch.cat([bck_slot, s_obj], dim=1)
            attention = self.attention_step(s_sce, slots_full)
            u_id, u_ext = attention.u[:, 1:].split([self.int_size, self.ext_size], dim=-1)
            s_id_next = self.gru_int(u_id.reshape(-1, self.int_size), s_id.reshape(-1, self.int_size))
            s_ext_next = self.gru_ext(u_ext.reshape(-1, self.ext_size), s_ext.reshape(-1, self.ext_size))
            s_id_next = s_id_next.reshape(s_id.shape)
            s_ext_next = s_ext_next.reshape(s_ext.shape)

            gamma = self.identity_logits(s_id)
            trace.append(DsaIteration(
                state=SlotState(
                    s_ext=s_ext, gamma=gamma, y=F.softmax(gamma, dim=-1),
                    s_int=s_id, s_obj=s_obj, iteration=t,
                ),
                attention=attention,
                s_int=s_id_next,
                s_ext=s_ext_next,
                gamma=self.identity_logits(s_id_next),
            ))
            s_id, s_ext = s_id_next, s_ext_next

        last = trace[-1]
        return DsaOutput(gamma=last.gamma, s_ext=last.s_ext, s_int=last.s_int, trace=trace)

    def forward(self, s_sce, s_bck, bank=None, temperature=1.0, noise=None, hard=False) -> DsaOutput:
        return self.run_dsa(s_sce, s_bck, bank, temperature, noise, hard)


def _bank_logits(s_int: torch.Tensor, bank: GlobalBank) -> torch.Tensor:
    return torch.matmul(s_int, bank.projected().transpose(0, 1)) / math.sqrt(s_int.shape[-1])


def build_slot_attention(variant: str, config: DsaConfig, input_size: int, bck_size: int) -> _SlotAttentionBase:
    """
    Build the attention mechanism of a model variant.

    Raises:
        InvalidArgumentError: If the variant is unknown
    """
    if variant == "full":
        return DisentangledSlotAttention(config, input_size, bck_size)
    if variant == "no_dsa":
        return SlotAttention(config, input_size, bck_size)
    if variant == "no_glo":
        return IdentitySlotAttention(config, input_size, bck_size)
    raise InvalidArgumentError(f"Unknown model variant: {variant}")
