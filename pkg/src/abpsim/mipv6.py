"""Simplified Mobile IPv6: care-of address, home agent and return routability.

After each association the node waits for a router advertisement, runs
duplicate address detection, registers the new care-of address with its home
agent and finally authorizes a binding update at the correspondent through
the return routability procedure.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .baseline import SingleInterfaceClient
from .engine import us


@dataclass
class Mipv6Params:
    router_adv_interval: float = field(default=3.0, metadata={"min": 0})
    dad_delay: float = field(default=1.0, metadata={"min": 0})
    binding_update_rtt: float = field(default=0.5, metadata={"min": 0})
    return_routability_rtt: float = field(default=1.5, metadata={"min": 0})
    home_agent_detour_latency: float = field(default=0.030, metadata={"min": 0})
    route_optimization: bool = True
    retry_interval: float = field(default=0.020, metadata={"min": 0, "exclusive": True})

    def validate(self) -> None:
        pass

    def expected_control_time(self) -> float:
        """Mean duration of the post-association procedure in seconds."""
        t = self.router_adv_interval / 2 + self.dad_delay + self.binding_update_rtt
        if self.route_optimization:
            t += self.return_routability_rtt + self.binding_update_rtt
        return t


@dataclass
class BindingState:
    care_of_address: str | None = None
    home_binding_valid: bool = False
    correspondent_binding_valid: bool = False

    def __post_init__(self):
        self.check()

    def check(self) -> None:
        if self.correspondent_binding_valid and not self.home_binding_valid:
            raise AssertionError("correspondent binding without home binding")


def mipv6_path_latency(state: BindingState, params: Mipv6Params) -> int | None:
    """Extra latency (us) of the data path, or None when traffic must wait."""
    if not state.home_binding_valid:
        return None
    if state.correspondent_binding_valid:
        return 0
    return us(params.home_agent_detour_latency)  # triangular routing via the home agent


class Mipv6Client(SingleInterfaceClient):
    protocol = "mipv6"
    infrastructure = ("ha",)

    def __init__(self, engine, radio, params: Mipv6Params, flow_id: str = "mn"):
        super().__init__(engine, radio, params, flow_id)
        self.binding = BindingState()
        self._ra = engine.rng(f"{radio.node}.mipv6.ra")

    def procedure(self):
        p = self.params
        ra_wait = us(self._ra.uniform(0.0, p.router_adv_interval))
        steps = [
            (self.radio.node, "router-adv", ra_wait),
            (self.radio.node, "dad", us(p.dad_delay)),
            ("ha", "binding-ack", us(p.binding_update_rtt)),
        ]
        if p.route_optimization:
            steps += [
                ("cn", "return-routability", us(p.return_routability_rtt)),
                ("cn", "binding-ack", us(p.binding_update_rtt)),
            ]
        return steps

    def invalidate(self) -> None:
        self.binding = BindingState()

    def step_done(self, kind: str) -> None:
        b = self.binding
        if kind == "dad":
            b.care_of_address = self.nic.address
        elif kind == "binding-ack" and not b.home_binding_valid:
            b.home_binding_valid = True
        elif kind == "binding-ack":
            b.correspondent_binding_valid = True
        b.check()

    def extra_latency(self):
        return mipv6_path_latency(self.binding, self.params)
