"""Privacy audit toolkit for synthetic network traffic."""

__version__ = "0.1.0"
