"""Domain-invariant representation learning lab: layered DANN/MDM training and exact bound certification."""

__version__ = "0.1.0"
