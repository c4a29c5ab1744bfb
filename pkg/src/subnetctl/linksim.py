"""Per-TTI uplink simulation: SINR/Shannon rates, transmit buffers, deliveries.

Each subnetwork's sensor pushes a fresh state packet into its transmit buffer
every T_n TTIs and drains it at the Shannon rate of the interference-limited
uplink (fluid approximation: fractional bits carry over, residual rate within
a TTI rolls into the next queued packet).  A packet fully drained at TTI t is
a delivery with age t_D = t - generation time.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

BOLTZMANN = 1.380649e-23  # J/K


@dataclass
class RadioParams:
    bandwidth_hz: float = 3e6
    p_max_w: float = 1e-3          # 0 dBm
    noise_figure_db: float = 10.0
    temperature_k: float = 290.0
    tti_s: float = 1e-3
    carrier_ghz: float = 6.0

    def __post_init__(self):
        for name in ("bandwidth_hz", "p_max_w", "temperature_k", "tti_s", "carrier_ghz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def noise_power(params: RadioParams) -> float:
    """Thermal noise power sigma^2 = k_B * T * B * 10^(NF/10) in watts."""
    return BOLTZMANN * params.temperature_k * params.bandwidth_hz \
        * 10.0 ** (params.noise_figure_db / 10.0)


def _power_gains(channel) -> np.ndarray:
    if hasattr(channel, "power_gains"):
        return channel.power_gains
    arr = np.asarray(channel)
    if np.iscomplexobj(arr):
        return np.abs(arr) ** 2
    return arr


def rates(p, channel, active=None, params: RadioParams = None,
          interference_free: bool = False) -> np.ndarray:
    """Shannon rates in bits/s.

    Y_n = B log2(1 + p_n |g_nn|^2 / (sum_{m in active, m != n} p_m |g_mn|^2 + sigma^2))
    for n in the active set, 0 elsewhere.  `interference_free` drops the cross
    terms entirely (round-robin sub-slots, no-interference reference).
    """
    params = RadioParams() if params is None else params
    G = _power_gains(channel)
    n = G.shape[0]
    p = np.asarray(p, dtype=float)
    if np.any(p < 0) or np.any(p > params.p_max_w * (1 + 1e-12)):
        raise ValueError("powers must lie in [0, p_max]")
    if active is None:
        mask = np.ones(n, dtype=bool)
    else:
        mask = np.zeros(n, dtype=bool)
        mask[np.asarray(active)] = True
    p_eff = np.where(mask, p, 0.0)
    sigma2 = noise_power(params)
    desired = p_eff * np.diag(G)
    if interference_free:
        interf = np.zeros(n)
    else:
        interf = G.T @ p_eff - desired
    out = np.zeros(n)
    out[mask] = params.bandwidth_hz * np.log2(1.0 + desired[mask] / (interf[mask] + sigma2))
    return out


@dataclass
class Packet:
    size_bits: float
    generated_at: int
    remaining_bits: float


@dataclass
class DeliveryEvent:
    subnetwork: int
    generated_at: int
    delivered_at: int

    @property
    def t_d(self) -> int:
        return self.delivered_at - self.generated_at


@dataclass
class TransmitBuffer:
    """FIFO sensor buffer generating one packet every `period` TTIs.

    capacity=None keeps the queue unbounded; a finite capacity drops the
    oldest packet on overflow at enqueue time (the stale state is the least
    useful one to the controller).
    """

    subnetwork: int
    period: int = 2
    packet_bits: float = 1024.0
    capacity: int | None = None
    queue: deque = field(default_factory=deque)

    def maybe_generate(self, now: int) -> None:
        if now % self.period == 0:
            self.queue.append(Packet(self.packet_bits, now, self.packet_bits))
            if self.capacity is not None:
                while len(self.queue) > self.capacity:
                    self.queue.popleft()

    @property
    def backlog_bits(self) -> float:
        return sum(pkt.remaining_bits for pkt in self.queue)


def advance_buffers(buffers, rate_vec, now: int, params: RadioParams = None,
                    slot_fraction: float = 1.0):
    """Drain each buffer by rate * TTI * slot_fraction bits; emit deliveries.

    Residual capacity within a TTI rolls into the next queued packet, so a
    fast link can clear several packets in one TTI (distinct delivery events,
    distinct ages).  Buffers are mutated in place.
    """
    params = RadioParams() if params is None else params
    events = []
    for buf, rate in zip(buffers, rate_vec):
        budget = rate * params.tti_s * slot_fraction
        while buf.queue and budget >= buf.queue[0].remaining_bits - 1e-12:
            pkt = buf.queue.popleft()
            budget -= pkt.remaining_bits
            events.append(DeliveryEvent(buf.subnetwork, pkt.generated_at, now))
        if buf.queue and budget > 0:
            buf.queue[0].remaining_bits -= budget
        # a packet never sits at exactly zero remaining bits
        if buf.queue and buf.queue[0].remaining_bits <= 0:
            pkt = buf.queue.popleft()
            events.append(DeliveryEvent(buf.subnetwork, pkt.generated_at, now))
    return buffers, events


def freshest_delivery(events, subnetwork: int):
    """The smallest-age delivery for one subnetwork this TTI, or None."""
    best = None
    for ev in events:
        if ev.subnetwork == subnetwork and (best is None or ev.t_d < best.t_d):
            best = ev
    return best
