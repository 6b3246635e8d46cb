# Copyright (c) 2020-2026. All rights reserved.

from abc import ABCMeta, abstractmethod
import aiofiles  # type: ignore
import csv
import io
import math
import numbers
import os
from typing import Any, Dict, List, Sequence, Tuple

Table = Tuple[Tuple[str, ...], List[Tuple]]

TABLE_EXTN = '.csv'


def _encode_cell(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, numbers.Integral):
        return str(int(value))
    if isinstance(value, numbers.Real):
        return repr(float(value))
    return str(value)


def _decode_cell(text: str) -> Any:
    if text == '':
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def encode_csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise ValueError('row {} does not match header {}'.format(
                row, tuple(header)
            ))
        writer.writerow([_encode_cell(v) for v in row])
    return buf.getvalue()


def decode_csv(text: str) -> Table:
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise ValueError('table has no header')
    rows = [tuple(_decode_cell(c) for c in row) for row in reader]
    return header, rows


def same_table(a: Table, b: Table) -> bool:
    '''Cell-wise equality with NaN equal to NaN.'''
    if a[0] != b[0] or len(a[1]) != len(b[1]):
        return False
    for row_a, row_b in zip(a[1], b[1]):
        for x, y in zip(row_a, row_b):
            both_nan = (
                isinstance(x, float) and isinstance(y, float)
                and math.isnan(x) and math.isnan(y)
            )
            if not both_nan and x != y:
                return False
    return True


class AbstractResultStore(metaclass=ABCMeta):
    @abstractmethod
    async def start(self):
        pass

    @abstractmethod
    async def stop(self):
        pass

    @abstractmethod
    async def write_text(self, name: str, text: str) -> None:
        raise NotImplementedError()

    @abstractmethod
    async def read_text(self, name: str) -> str:
        raise NotImplementedError()

    @abstractmethod
    async def list_names(self) -> List[str]:
        raise NotImplementedError()

    @abstractmethod
    async def clear(self) -> None:
        raise NotImplementedError()

    async def write_table(
        self,
        name: str,
        header: Sequence[str],
        rows: Sequence[Sequence]
    ) -> None:
        await self.write_text(name + TABLE_EXTN, encode_csv(header, rows))

    async def read_table(self, name: str) -> Table:
        return decode_csv(await self.read_text(name + TABLE_EXTN))

    async def list_tables(self) -> List[str]:
        return sorted(
            n[:-len(TABLE_EXTN)] for n in await self.list_names()
            if n.endswith(TABLE_EXTN)
        )


class InMemoryResultStore(AbstractResultStore):
    def __init__(self):
        self.texts: Dict[str, str] = {}

    async def start(self):
        await super().start()

    async def stop(self):
        await super().stop()

    async def write_text(self, name: str, text: str) -> None:
        self.texts[name] = text

    async def read_text(self, name: str) -> str:
        return self.texts[name]

    async def list_names(self) -> List[str]:
        return sorted(self.texts)

    async def clear(self) -> None:
        self.texts = {}


class FilesystemResultStore(AbstractResultStore):
    def __init__(self, store_dir_path: str):
        store_dir = os.path.abspath(store_dir_path)
        if not os.path.exists(store_dir):
            os.makedirs(store_dir)
        if not (os.path.isdir(store_dir) and os.access(store_dir, os.W_OK)):
            raise ValueError(
                'Result store "{}" is not a writable directory'.format(
                    store_dir
                )
            )
        self._store = store_dir

    async def start(self):
        await super().start()

    async def stop(self):
        await super().stop()

    @property
    def store(self) -> str:
        return self._store

    def _file_name(self, name: str) -> str:
        if os.path.basename(name) != name:
            raise ValueError('{} is not a plain file name'.format(name))
        return os.path.join(self.store, name)

    async def write_text(self, name: str, text: str) -> None:
        async with aiofiles.open(
            self._file_name(name),
            mode='w',
            encoding='utf-8',
            newline=''
        ) as f:
            await f.write(text)

    async def read_text(self, name: str) -> str:
        try:
            async with aiofiles.open(
                self._file_name(name),
                mode='r',
                encoding='utf-8',
                newline=''
            ) as f:
                return await f.read()
        except FileNotFoundError:
            raise KeyError(name)

    async def list_names(self) -> List[str]:
        return sorted(
            f for f in os.listdir(self.store)
            if os.path.isfile(os.path.join(self.store, f))
        )

    async def clear(self) -> None:
        for name in await self.list_names():
            os.remove(self._file_name(name))
