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
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Union
import hashlib
import json
import logging
import sqlite3
import threading

import numpy as np


class DistanceCache:
    """
    A persistent cache of cloud-to-cloud distances.

    Parameters
    ----------
    db_path : str or Path
        The path to the SQLite database file.
    max_size : int, optional
        The maximum number of cached distances.
    expiration : timedelta, optional
        Age after which an entry is ignored.

    Attributes
    ----------
    hits, misses : int
        Lookup counters for the lifetime of this object.
    lock : threading.Lock
        Serializes access from worker threads.
    """

    def __init__(
        self,
        db_path: Union[str, Path],
        max_size: int = 1_000_000,
        expiration: timedelta = timedelta(days=30),
    ):
        self.db_path = str(db_path)
        self.max_size = max_size
        self.expiration = expiration
        self.hits = 0
        self.misses = 0
        self.lock = threading.Lock()
        self.initialize_cache()

    def initialize_cache(self):
        """Create the distance table if it does not already exist."""
        with self.lock, sqlite3.connect(self.db_path) as conn:
            conn.execute(
                """
                CREATE TABLE IF NOT EXISTS distances (
                    pair_hash TEXT PRIMARY KEY,
                    value TEXT,
                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP
                )
                """
            )
            conn.commit()

    def _cutoff(self) -> str:
        # CURRENT_TIMESTAMP is stored as UTC text
        cutoff = datetime.now(timezone.utc) - self.expiration
        return cutoff.strftime("%Y-%m-%d %H:%M:%S")

    @staticmethod
    def key(metric: str, a: np.ndarray, b: np.ndarray) -> str:
        """Hash a metric name and two clouds' exact float64 bytes."""
        digest = hashlib.sha256(metric.encode("utf-8"))
        for pts in (a, b):
            pts = np.ascontiguousarray(pts, dtype="<f8")
            digest.update(str(pts.shape).encode("utf-8"))
            digest.update(pts.tobytes())
        return digest.hexdigest()

    def get(self, pair_hash: str) -> Optional[float]:
        """Return the cached distance, or None when absent or expired."""
        with self.lock, sqlite3.connect(self.db_path) as conn:
            row = conn.execute(
                """
                SELECT value FROM distances
                WHERE pair_hash = ? AND timestamp > ?
                """,
                (pair_hash, self._cutoff()),
            ).fetchone()
        if row is None:
            self.misses += 1
            return None
        self.hits += 1
        logging.debug("Distance cache hit for %s", pair_hash[:12])
        return float(json.loads(row[0]))

    def set(self, pair_hash: str, value: float):
        """Store a distance, evicting the oldest entries past max_size."""
        # repr round-trips float64 exactly through JSON
        serialized = json.dumps(float(value))
        with self.lock, sqlite3.connect(self.db_path) as conn:
            conn.execute(
                """REPLACE INTO distances (
                    pair_hash,
                    value,
                    timestamp
                ) VALUES (?, ?, CURRENT_TIMESTAMP)""",
                (pair_hash, serialized),
            )
            conn.execute(
                """
                DELETE FROM distances
                WHERE rowid NOT IN (
                    SELECT rowid
                    FROM distances
                    ORDER BY rowid DESC
                    LIMIT ?
                )
                """,
                (self.max_size,),
            )
            conn.commit()

    def log_stats(self):
        logging.info(
            "Distance cache: %d hits, %d misses", self.hits, self.misses
        )
