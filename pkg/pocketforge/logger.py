# Copyright (C) 2024 The pocketforge authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
# implied.
# See the License for the specific language governing permissions and
# limitations under the License.
#
from typing import Optional, Union
import logging

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def basic_config(
    filename: Optional[str] = None,
    level: Union[int, str] = logging.INFO,
    log_format: str = LOG_FORMAT,
) -> None:
    """
    This function sets up the logging configuration for the application.

    :param filename: The name of the log file, or None for stderr.
    :param level: The logging level, as a number or a level name.
    :param log_format: The format of the log messages.
    :return: None
    """
    if isinstance(level, str):
        level = logging.getLevelName(level.upper())
        if not isinstance(level, int):
            level = logging.INFO
    logging.basicConfig(
        filename=filename, level=level, format=log_format, force=True
    )
    # numba logs every compiler pass at DEBUG.
    logging.getLogger("numba").setLevel(logging.WARNING)
