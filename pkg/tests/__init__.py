# Copyright (c) 2020. All rights reserved.
