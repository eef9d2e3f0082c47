"""Federation kernel: a desk-scale cloud federation platform.

Subsystems: the hash-chained governance ledger (`registry`), federated
identity (`identity`), distributed attribute-based access control (`policy`),
data masking (`masking`), anonymization (`anonymization`), secret-sharing
computation (`smc`), workload brokerage (`iwm`), runtime monitoring
(`monitor`), offline audit (`audit`), the phase orchestrator
(`orchestrator`), simulated member clouds (`simcloud`) and the scenario/HTTP
front ends (`scenario`, `httpapi`, `cli`).
"""

__version__ = "0.1.0"
