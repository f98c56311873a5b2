"""attestkit: a centralized measurement and attestation toolkit.

The pieces, bottom up: a component registry (ASPs, APBs, measurement
specs), selection policies, a negotiation protocol between attestation
manager daemons, a guarded-clause measurement-spec language with an
obligation-queue evaluator, evidence bundling with three signature
styles, the AM daemon itself, and a host-monitor service with a REST
API on top.

Keep this module import-light: ASP child processes import the package
on every spawn.
"""

__version__ = "0.1.0"
