"""Tests for bsdelab library"""
