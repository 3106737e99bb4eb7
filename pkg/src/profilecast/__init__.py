"""Interest-aware profile-cast delivery for mobile social networks."""

__version__ = "0.1.0"
