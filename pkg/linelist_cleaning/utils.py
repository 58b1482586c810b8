import json
import warnings
from collections.abc import Iterable
import numpy as np
from typing import Any
import os
import pathlib


def create_invalid_data_str(invalid_data):
    """Creates a easy to read string for ValueError statements.
    Args:
        invalid_data (list[str]): A list of strings containing the invalid / missing data
    Returns:
        str: Returns a formatted string for more detailed ValueError outputs.
    """
    # Holder for the error string
    err_str_data = ""

    # Adding up to 10 invalid values to the err_str_data.
    for idx, data in enumerate(invalid_data[:10], start=1):
        err_msg = "{idx:{fill}{align}{width}} {message}\n".format(
            idx=idx,
            message=data,
            fill=" ",
            align="<",
            width=12,
        )
        err_str_data += err_msg

    return err_str_data


def make_iterable(a: Any, ignore_str: bool = True):
    """ Convert noniterable type to singleton in list
    Args:
        a (T | Iterable[T]):
            value or iterable of type T
        ignore_str (bool):
            whether to ignore the iterability of the str type
    Returns:
        List[T]:
            a as singleton in list, or a if a was already iterable.
    """
    return a if isinstance(a, Iterable) and not ((isinstance(a, str) and ignore_str) or
                                                 isinstance(a, type)) else [a]


def verify_in_list(warn=False, exc=ValueError, **kwargs):
    """Verify that all values in the first list exist in the second

    Used for header, role and level checks on user supplied configuration.

    Args:
        warn (bool):
            Whether to issue warning instead of error, defaults to False
        exc (type):
            Exception class raised on mismatch, defaults to ValueError
        **kwargs (list, list):
            Two lists, but will work for single elements as well.
            The first list specified will be tested to see
            if all its elements are contained in the second.
    Raises:
        ValueError:
            if not all values in the first list are found in the second
        Warning:
            if not all values are found and warn is True
    """

    if len(kwargs) != 2:
        raise ValueError("You must provide 2 arguments to verify_in_list")

    test_list, good_values = kwargs.values()
    test_list = list(make_iterable(test_list))
    good_values = list(make_iterable(good_values))

    if len(good_values) == 0:
        raise ValueError("List arguments cannot be empty")
    if len(test_list) == 0:
        return

    if not np.isin(np.array(test_list, dtype=object), np.array(good_values, dtype=object)).all():
        test_list_name, good_values_name = kwargs.keys()
        test_list_name = test_list_name.replace("_", " ")
        good_values_name = good_values_name.replace("_", " ")

        # Calculate the difference between the `test_list` and the `good_values`
        difference = [str(val) for val in test_list if val not in good_values]

        # Only printing up to the first 10 invalid values.
        err_str = ("Not all values given in list {0:^} were found in list {1:^}.\n "
                   "Displaying {2} of {3} invalid value(s) for list {4:^}\n").format(
            test_list_name, good_values_name,
            min(len(difference), 10), len(difference), test_list_name
        )

        err_str += create_invalid_data_str(difference)

        if warn:
            warnings.warn(err_str)
        else:
            raise exc(err_str)


def validate_paths(paths):
    """Verifies that input files exist before any work starts
    Args:
        paths (str or list):
            paths to verify.
    Raises:
        FileNotFoundError:
            Raised if any file or one of its parent folders is missing
    """

    # if given a single path, convert to list
    if not isinstance(paths, list):
        paths = [paths]

    for path in paths:
        if not os.path.exists(path):
            for parent in reversed(pathlib.Path(path).parents):
                if not os.path.exists(parent):
                    raise FileNotFoundError(
                        f'A bad path, {path}, was provided.\n'
                        f'The folder, {parent.name}, could not be found...')
            raise FileNotFoundError(
                f'The file/path, {pathlib.Path(path).name}, could not be found...')


def resolve_path(path, base_dir):
    """Resolves a config-relative path
    Args:
        path (str):
            absolute path or path relative to base_dir
        base_dir (str):
            directory of the config file that named the path
    Returns:
        str:
            the resolved path, or None if path is empty
    """
    if not path:
        return None
    if os.path.isabs(path):
        return path
    return os.path.normpath(os.path.join(base_dir, path))


def parse_key_value_lines(text):
    """Parses the `key = value` format shared by mapping and keyword files

    Values may be wrapped in single or double quotes. `#` starts a comment when it is
    the first non-blank character of a line.

    Args:
        text (str):
            file contents
    Returns:
        list[tuple[str, str, int]]:
            (key, value, line number) in file order
    Raises:
        ValueError:
            if a non-comment line has no `=` or an empty key or value
    """
    pairs = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError("Line {} is not of the form 'key = value': {}".format(
                line_no, stripped))
        key, value = stripped.split("=", 1)
        key, value = key.strip(), value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        if not key or not value:
            raise ValueError("Line {} has an empty key or value: {}".format(line_no, stripped))
        pairs.append((key, value, line_no))
    return pairs


def write_jsonl(path, rows, mode="w"):
    """Writes dicts as JSON lines
    Args:
        path (str):
            output file
        rows (iterable[dict]):
            records to write
        mode (str):
            'w' to overwrite, 'a' to append
    """
    with open(path, mode, encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_jsonl(path):
    """Reads a JSON lines file, skipping blank lines
    Raises:
        ValueError:
            naming the line that is not valid JSON
    """
    validate_paths(path)
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as err:
                raise ValueError("Line {} of {} is not valid JSON: {}".format(
                    line_no, path, err)) from err
    return rows
