"""Inference FLOPs estimates and API dollar cost."""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Union

Number = Union[int, float, Decimal, str]
_MILLION = Decimal(1_000_000)


def _nonneg(**values: Number) -> None:
    for name, v in values.items():
        if Decimal(str(v)) < 0:
            raise ValueError(f"{name} must be non-negative, got {v}")


def estimate_flops(N: int, V: int, Q: int, G: int) -> int:
    """Linear estimate ``N * (V + Q + G)`` for one query: params times processed tokens."""
    _nonneg(N=N, V=V, Q=Q, G=G)
    return int(N) * (int(V) + int(Q) + int(G))


def estimate_reguide_flops(N: int, V: int, Q1: int, G1: int, Q2: int, G2: int) -> int:
    """Both stages on one image; the image tokens are counted once since they can be cached."""
    _nonneg(N=N, V=V, Q1=Q1, G1=G1, Q2=Q2, G2=G2)
    return int(N) * (int(V) + int(Q1) + int(G1) + int(Q2) + int(G2))


def api_cost(input_tokens: Number, output_tokens: Number,
             price_per_m_input: Number, price_per_m_output: Number) -> Decimal:
    """Dollar cost with prices quoted per million tokens, in exact decimal arithmetic."""
    _nonneg(input_tokens=input_tokens, output_tokens=output_tokens,
            price_per_m_input=price_per_m_input, price_per_m_output=price_per_m_output)
    d = lambda v: Decimal(str(v))  # noqa: E731
    return d(input_tokens) / _MILLION * d(price_per_m_input) + d(output_tokens) / _MILLION * d(price_per_m_output)


@dataclass(frozen=True)
class CostInputs:
    N: int
    V: int = 0
    Q: int = 0
    G: int = 0
    Q2: int = 0
    G2: int = 0
    price_per_m_input: Decimal = Decimal(0)
    price_per_m_output: Decimal = Decimal(0)

    def __post_init__(self) -> None:
        _nonneg(N=self.N, V=self.V, Q=self.Q, G=self.G, Q2=self.Q2, G2=self.G2)

    @property
    def two_stage(self) -> bool:
        return bool(self.Q2 or self.G2)

    def flops(self) -> int:
        if self.two_stage:
            return estimate_reguide_flops(self.N, self.V, self.Q, self.G, self.Q2, self.G2)
        return estimate_flops(self.N, self.V, self.Q, self.G)

    def dollars(self) -> Decimal:
        inp = self.V + self.Q + self.Q2
        out = self.G + self.G2
        return api_cost(inp, out, self.price_per_m_input, self.price_per_m_output)


@dataclass(frozen=True)
class Price:
    input: Decimal
    output: Decimal


def load_price_table(path: str | Path | None = None) -> dict[str, Price]:
    """Model id -> per-million-token prices. Defaults to the bundled table."""
    if path is None:
        text = resources.files("lvlm_ood").joinpath("data/prices.json").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    models = json.loads(text)["models"]
    return {m: Price(Decimal(str(p["input"])), Decimal(str(p["output"]))) for m, p in models.items()}
