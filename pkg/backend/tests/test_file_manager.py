import io
import os

import numpy as np
import pytest

from errors import DatasetFormatError
from file_manager import FileManager, read_values


class TestFileManager:
    def test_write_atomic(self, tmp_path):
        target = tmp_path / 'out' / 'result.csv'
        written = FileManager().write_atomic(str(target), 'a,b\n1,2\n')
        assert written == str(target)
        assert target.read_text() == 'a,b\n1,2\n'
        assert os.listdir(target.parent) == ['result.csv']

    def test_replaces_existing_file(self, tmp_path):
        target = tmp_path / 'result.json'
        target.write_text('old')
        FileManager().write_atomic(str(target), 'new')
        assert target.read_text() == 'new'

    def test_relative_path_uses_output_folder(self, tmp_path):
        manager = FileManager(str(tmp_path))
        path = manager.write_atomic('table.csv', 'x\n')
        assert path == os.path.join(str(tmp_path), 'table.csv')

    def test_absolute_path_ignores_output_folder(self, tmp_path):
        manager = FileManager('/nonexistent-folder')
        target = str(tmp_path / 'table.csv')
        assert manager.resolve(target) == target


class TestReadValues:
    def test_separators_and_comments(self, tmp_path):
        path = tmp_path / 'values.txt'
        path.write_text('# header\n1.5, -2\n3e-1   4 # trailing\n\n')
        np.testing.assert_array_equal(read_values(str(path)), [1.5, -2.0, 0.3, 4.0])

    def test_bad_token(self, tmp_path):
        path = tmp_path / 'values.txt'
        path.write_text('1.0\n2.0 x\n')
        with pytest.raises(DatasetFormatError) as info:
            read_values(str(path))
        assert ':2:' in str(info.value)

    def test_stdin(self, monkeypatch):
        monkeypatch.setattr('sys.stdin', io.StringIO('1 2 3\n'))
        np.testing.assert_array_equal(read_values('-'), [1.0, 2.0, 3.0])

    def test_empty_file(self, tmp_path):
        path = tmp_path / 'values.txt'
        path.write_text('')
        assert len(read_values(str(path))) == 0
