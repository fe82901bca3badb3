"""Knowledge-grounded semantic novelty detection for facts about entity pairs."""

__version__ = "0.1.0"
