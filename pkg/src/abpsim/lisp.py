"""Simplified LISP mobility: map-request, map-cache update and tunnel routers.

A locator change invalidates the correspondent side's map-cache entry for
the node's endpoint identifier. Traffic resumes when a map-request round trip
and the cache update have completed, plus a configuration step when the
correspondent sits outside a LISP-enabled site.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .baseline import SingleInterfaceClient
from .engine import us


@dataclass
class LispParams:
    map_request_rtt: float = field(default=0.5, metadata={"min": 0})
    map_cache_update_delay: float = field(default=0.5, metadata={"min": 0})
    encap_latency: float = field(default=0.005, metadata={"min": 0})
    non_lisp_config_delay: float = field(default=1.0, metadata={"min": 0})
    correspondent_in_lisp_site: bool = False
    retry_interval: float = field(default=0.020, metadata={"min": 0, "exclusive": True})

    def validate(self) -> None:
        pass

    def control_time(self) -> float:
        t = self.map_request_rtt + self.map_cache_update_delay
        if not self.correspondent_in_lisp_site:
            t += self.non_lisp_config_delay
        return t


@dataclass
class MapCacheEntry:
    endpoint_id: str
    locator: str | None = None
    valid: bool = False


def lisp_path_latency(entry: MapCacheEntry, params: LispParams) -> int | None:
    if not entry.valid:
        return None
    return us(params.encap_latency)


class LispClient(SingleInterfaceClient):
    protocol = "lisp"
    infrastructure = ("map-resolver", "xtr")

    def __init__(self, engine, radio, params: LispParams, flow_id: str = "mn"):
        super().__init__(engine, radio, params, flow_id)
        self.cache = MapCacheEntry(flow_id)

    def procedure(self):
        p = self.params
        steps = [
            ("map-resolver", "map-reply", us(p.map_request_rtt)),
            ("xtr", "map-cache-update", us(p.map_cache_update_delay)),
        ]
        if not p.correspondent_in_lisp_site:
            steps.append(("xtr", "non-lisp-config", us(p.non_lisp_config_delay)))
        return steps

    def invalidate(self) -> None:
        self.cache = MapCacheEntry(self.flow_id)

    def step_done(self, kind: str) -> None:
        if kind == "map-cache-update":
            self.cache.locator = self.nic.address

    def procedure_complete(self) -> None:
        self.cache.valid = True

    def extra_latency(self):
        return lisp_path_latency(self.cache, self.params)
