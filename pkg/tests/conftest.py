# Present so the test directory is importable (shared helpers in oracles.py).
