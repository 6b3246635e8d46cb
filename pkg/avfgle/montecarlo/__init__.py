# Copyright (c) 2026. All rights reserved.
