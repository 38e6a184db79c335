import logging
import os
import sys
import tempfile

import numpy as np

from errors import DatasetFormatError

logger = logging.getLogger(__name__)


class FileManager:
    """Resolve output paths and write result files atomically"""

    def __init__(self, output_folder=None):
        self.output_folder = output_folder

    def resolve(self, path):
        """Relative paths land in the output folder when one is configured"""
        if self.output_folder and not os.path.isabs(path):
            return os.path.join(self.output_folder, path)
        return path

    def write_atomic(self, path, text):
        """
        Write text to path via a temp file in the same folder and os.replace,
        so readers see either the old file or the complete new one.
        """
        path = self.resolve(path)
        folder = os.path.dirname(os.path.abspath(path))
        os.makedirs(folder, exist_ok=True)

        fd, tmp_path = tempfile.mkstemp(dir=folder, prefix='.' + os.path.basename(path) + '.',
                                        suffix='.tmp')
        try:
            with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
                f.write(text)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp_path, path)
        except BaseException:
            if os.path.exists(tmp_path):
                os.unlink(tmp_path)
            raise
        logger.debug("wrote %s (%d bytes)", path, len(text))
        return path


def read_values(path):
    """
    Reals separated by whitespace or commas; `#` starts a comment.
    A path of `-` reads standard input.
    """
    if path == '-':
        return _parse_values(sys.stdin, '<stdin>')
    with open(path, encoding='utf-8') as f:
        return _parse_values(f, path)


def _parse_values(lines, path):
    values = []
    for line_no, line in enumerate(lines, start=1):
        line = line.split('#', 1)[0].replace(',', ' ')
        for token in line.split():
            try:
                values.append(float(token))
            except ValueError:
                raise DatasetFormatError(f"{path}:{line_no}: not a real number: {token!r}")
    return np.array(values, dtype=np.float64)
