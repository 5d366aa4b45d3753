"""Distributed NE seeking for aggregative games over switching digraphs."""
