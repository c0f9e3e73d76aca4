"""Desk-scale EMT solver for balanced networks (alpha/beta representation)."""
from .circuit import GND, Circuit
from .hooks import CallableHook, InjectionHook, PhasorCurrentSource
from .network import (STEPS_PER_CYCLE, EmtSession, FaultSpec, NetworkModel, SimConfig,
                      apply_fault, build_network, default_dt, machine_emf, run,
                      steady_state_init)
from .solver import RunRecord, Simulator, warped_omega
from .trace import SimTrace

__all__ = ["GND", "Circuit", "CallableHook", "InjectionHook", "PhasorCurrentSource",
           "STEPS_PER_CYCLE", "EmtSession", "FaultSpec", "NetworkModel", "SimConfig",
           "apply_fault", "build_network", "default_dt", "machine_emf", "run",
           "steady_state_init", "RunRecord", "Simulator", "warped_omega", "SimTrace"]
