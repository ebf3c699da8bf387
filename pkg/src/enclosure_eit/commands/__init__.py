"""Command implementations for the enclosure-eit CLI."""
