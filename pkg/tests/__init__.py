"""Unit test package for skytwin."""
