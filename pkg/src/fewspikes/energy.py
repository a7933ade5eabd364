"""Operation counting and the three inference energy models.

Per 32-bit floating-point operation: an accumulate costs 0.9 pJ and a
multiply-accumulate 4.6 pJ.  The ANN model charges one MAC per synaptic
connection (scaled by activation sparsity where a method exploits it); the
LIF model charges sparse-spike ACs plus the per-step decay MACs; the
few-spikes model charges only the spike-driven ACs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .network import Network, forward

__all__ = ["E_AC", "E_MAC", "OpCounts", "EnergyReport", "count_ops",
           "energy_ann", "energy_lif", "energy_fsn", "TableRow", "load_rows",
           "replay_rows", "row_tolerance_mj"]

E_AC = 0.9e-12   # joules per accumulate
E_MAC = 4.6e-12  # joules per multiply-accumulate


@dataclass(frozen=True)
class OpCounts:
    """Counts behind the energy formulas for one inference.

    ``op_ac`` is the number of synaptic connections (identical to the ANN
    MAC count over the same layers); ``fr`` is the fraction of (neuron,
    timestep) slots that spiked.  The readout layer is excluded from both:
    it emits membrane potentials, not spikes.
    """

    op_ac: int
    fr: float
    K: int
    mac_dlnet: int

    def __post_init__(self) -> None:
        if not (0.0 <= self.fr <= 1.0):
            raise ValueError(f"firing rate must be in [0, 1], got {self.fr}")
        if self.op_ac < 0:
            raise ValueError("op_ac must be non-negative")


def connection_count(net: Network, include_readout: bool = False) -> int:
    """Synaptic connections per inference: sum of output-size x fan-in."""
    total = 0
    weighted = [i for i, s in enumerate(net.specs) if s.weighted]
    counted = weighted if include_readout else weighted[:-1]
    for i in counted:
        spec = net.specs[i]
        out_shape = net.shapes[i]
        if spec.kind == "dense":
            fan_in = net.weights[i].shape[1]
            total += out_shape[0] * fan_in
        else:
            fan_in = net.weights[i][0].size
            total += int(np.prod(out_shape)) * fan_in
    return total


def count_ops(net: Network, batch: np.ndarray) -> OpCounts:
    """Measure spike activity on a batch and derive the operation counts.

    The firing rate is the neuron-weighted mean over all encoding sites
    except the readout input, averaged across the batch.
    """
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == len(net.input_shape):
        batch = batch[None]
    if len(batch) == 0:
        raise ValueError("empty batch")
    _, stats = forward(net, batch, mode="spike")
    k = net.specs[-1].fsn.K
    spikes = sum(stats.spikes[:-1])
    slots = sum(stats.slots[:-1])
    fr = spikes / slots if slots else 0.0
    return OpCounts(op_ac=connection_count(net), fr=fr, K=k,
                    mac_dlnet=connection_count(net, include_readout=True))


def energy_ann(op_mac: float, sp: float) -> float:
    """E = OP_MAC * sp * E_MAC (joules)."""
    if op_mac < 0 or sp < 0:
        raise ValueError("inputs must be non-negative")
    return op_mac * sp * E_MAC


def energy_lif(op_ac: float, fr: float, K: int) -> float:
    """E = K*OP_AC*fr*E_AC + K*OP_AC*(1-fr)*E_MAC (joules)."""
    if not (0.0 <= fr <= 1.0):
        raise ValueError(f"firing rate must be in [0, 1], got {fr}")
    return K * op_ac * fr * E_AC + K * op_ac * (1.0 - fr) * E_MAC


def energy_fsn(op_ac: float, fr: float, K: int) -> float:
    """E = K*OP_AC*fr*E_AC (joules): no decay MACs."""
    if not (0.0 <= fr <= 1.0):
        raise ValueError(f"firing rate must be in [0, 1], got {fr}")
    return K * op_ac * fr * E_AC


@dataclass(frozen=True)
class EnergyReport:
    """Joule estimates for one operating point under all three models."""

    ann_j: float
    lif_j: float
    fsn_j: float

    @staticmethod
    def from_counts(c: OpCounts, sp: float = 1.0) -> "EnergyReport":
        return EnergyReport(
            ann_j=energy_ann(c.mac_dlnet, sp),
            lif_j=energy_lif(c.op_ac, c.fr, c.K),
            fsn_j=energy_fsn(c.op_ac, c.fr, c.K),
        )


# ---------------------------------------------------------------------------
# published-table replay


@dataclass(frozen=True)
class TableRow:
    """One printed table row: operation count in giga-ops, rate, model."""

    name: str
    model: str            # ann | lif | fsn
    op_giga: float
    fr_or_sp: float
    K: int = 5
    expected_mj: float | None = None
    self_implemented: bool = False

    def __post_init__(self) -> None:
        if self.model not in ("ann", "lif", "fsn"):
            raise ValueError(f"unknown model {self.model!r}")
        if self.fr_or_sp < 0 or (self.model != "ann" and self.fr_or_sp > 1):
            raise ValueError(f"{self.name}: rate {self.fr_or_sp} out of range")

    def computed_mj(self) -> float:
        ops = self.op_giga * 1e9
        if self.model == "ann":
            j = energy_ann(ops, self.fr_or_sp)
        elif self.model == "lif":
            j = energy_lif(ops, self.fr_or_sp, self.K)
        else:
            j = energy_fsn(ops, self.fr_or_sp, self.K)
        return j * 1e3


def row_tolerance_mj(expected_mj: float) -> float:
    """Acceptance band: 5% of the printed value plus half its last decimal.

    Printed tables round both the energy and its inputs, so the replay from
    rounded inputs can sit up to half an ulp of the printout away even when
    the formula is exact.
    """
    text = f"{expected_mj}"
    decimals = len(text.split(".")[1]) if "." in text else 0
    return 0.05 * expected_mj + 0.5 * 10.0**-decimals


def load_rows(path) -> list[TableRow]:
    """Read a replay spec: JSON {"rows": [{name, model, op_giga, fr_or_sp, ...}]}."""
    with open(path) as fh:
        doc = json.load(fh)
    allowed = {"name", "model", "op_giga", "fr_or_sp", "K", "expected_mj", "self_implemented"}
    rows = []
    for i, entry in enumerate(doc["rows"]):
        unknown = set(entry) - allowed
        if unknown:
            raise ValueError(f"row {i}: unknown keys {sorted(unknown)}")
        rows.append(TableRow(**entry))
    return rows


def replay_rows(rows: list[TableRow]) -> list[dict]:
    """Compute each row and compare against its expected value when present."""
    out = []
    for row in rows:
        mj = row.computed_mj()
        rec = {"name": row.name, "model": row.model, "computed_mj": mj,
               "expected_mj": row.expected_mj, "self_implemented": row.self_implemented}
        if row.expected_mj is not None:
            tol = row_tolerance_mj(row.expected_mj)
            rec["tolerance_mj"] = tol
            rec["within_tolerance"] = abs(mj - row.expected_mj) <= tol
        out.append(rec)
    return out
