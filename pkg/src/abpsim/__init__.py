"""Multihomed vertical-handover simulator with ABPS, MIPv6 and LISP models."""
