"""bictrace: bug-inducing commit identification over local git repositories."""

__version__ = "0.1.0"
