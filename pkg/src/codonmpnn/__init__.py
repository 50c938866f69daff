"""Structure- and organism-conditioned codon sequence design."""

__version__ = "0.1.0"
