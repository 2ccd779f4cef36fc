"""Encoder-decoder tracker."""
