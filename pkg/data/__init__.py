# Copyright (c) 2020-2026. All rights reserved.

import glob
import json
import os
from typing import Dict, Sequence

AVFGLE_TEST_DATA_DIR = os.path.abspath(os.path.dirname(__file__))


STATE_DATA_DIR = os.path.abspath(os.path.join(
    AVFGLE_TEST_DATA_DIR,
    'states'
))

CONFIG_DATA_DIR = os.path.abspath(os.path.join(
    AVFGLE_TEST_DATA_DIR,
    'configs'
))

STATE_FILES = sorted(glob.glob(STATE_DATA_DIR + '/*.json'))

CONFIG_FILES = sorted(glob.glob(CONFIG_DATA_DIR + '/*.yaml'))


def _nickname(fname: str) -> str:
    return os.path.splitext(os.path.basename(fname))[0]


def initial_state_suite(
    json_files: Sequence[str] = STATE_FILES
) -> Dict[str, Dict]:
    '''
    Initial states as {"v": ..., "z": [...], "x": ...} keyed by file
    name.
    '''
    state_suite = {}

    for fname in json_files:
        with open(fname, mode='r', encoding='utf-8') as f:
            state_suite[_nickname(fname)] = json.load(f)

    return state_suite


def run_config_suite(
    yaml_files: Sequence[str] = CONFIG_FILES
) -> Dict[str, str]:
    '''Raw YAML text of the small run configs keyed by file name.'''
    config_suite = {}

    for fname in yaml_files:
        with open(fname, mode='r', encoding='utf-8') as f:
            config_suite[_nickname(fname)] = f.read()

    return config_suite
