"""Tests for the lane change prediction pipeline."""
