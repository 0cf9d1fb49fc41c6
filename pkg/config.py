# -*- coding: utf-8 -*-
import os

from dotenv import load_dotenv

load_dotenv()

# Logging config
# LOG_FORMAT: 'json' (python-json-logger) or 'text'
LOG_LEVEL = os.environ.get("SPAACE_LOG_LEVEL", "INFO")
LOG_FORMAT = os.environ.get("SPAACE_LOG_FORMAT", "text")

# Artifact output
OUTPUT_DIR = os.environ.get("SPAACE_OUTPUT_DIR", "out")

# Co-simulation server
COSIM_HOST = os.environ.get("SPAACE_COSIM_HOST", "127.0.0.1")
COSIM_PORT = int(os.environ.get("SPAACE_COSIM_PORT", "7345"))

# Worker pool used by compare/sweep; 1 runs everything in-process
MAX_WORKERS = int(os.environ.get("SPAACE_MAX_WORKERS", "1"))

# Calibration targets and the params fragment it produces
DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
CALIBRATION_TARGETS_FILE = os.path.join(DATA_DIR, "calibration_targets.ini")
CALIBRATED_PLANT_FILE = os.path.join(DATA_DIR, "plant_calibrated.ini")
