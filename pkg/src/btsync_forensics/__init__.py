"""Forensic toolkit for BitTorrent Sync 2.x artifacts."""

__version__ = "0.1.0"
