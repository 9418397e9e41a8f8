"""Tests for the ergodic inventory package."""
