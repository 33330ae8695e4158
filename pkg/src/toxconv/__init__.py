"""Structure and toxicity in online conversations: graph metrics, analyses, and prediction."""

__version__ = "0.1.0"
