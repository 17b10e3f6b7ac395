"""Queue-length based CSMA/CA scheduling laboratory."""
