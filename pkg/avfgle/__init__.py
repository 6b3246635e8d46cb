# Copyright (c) 2026. All rights reserved.

import json
import os

AVFGLE_ROOT_DIR = os.path.abspath(os.path.dirname(__file__))

RUNCONFIG_SCHEMA_FILE = os.path.abspath(os.path.join(
    AVFGLE_ROOT_DIR,
    '../schema/runconfig-v1.0.json'
))

with open(RUNCONFIG_SCHEMA_FILE, mode='r', encoding='utf-8') as f:
    RUNCONFIG_SCHEMA = json.load(f)

LOGGER_NAME = 'avfgle'
