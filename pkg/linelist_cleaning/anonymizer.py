"""Identifier removal and keyed pseudonymous ids"""
import hashlib
import logging
import math
import os
from dataclasses import dataclass, field

from linelist_cleaning.core_model import (
    IDENTIFIER_ROLES, Action, CellVerdict, ConfigurationError, Phase
)

logger = logging.getLogger(__name__)

MIN_KEY_BYTES = 16
MIN_ID_LENGTH = 16
SEPARATOR = "\x1f"
REDACTED = "<redacted>"


@dataclass(frozen=True)
class AnonConfig:
    """Secret key and scrypt cost parameters"""
    secret_key: bytes = field(repr=False)
    n: int = 1024
    r: int = 8
    p: int = 1
    id_length: int = 16
    salt_scope: str = "batch"
    fixed_salt: str = ""

    def __post_init__(self):
        if not self.secret_key or len(self.secret_key) < MIN_KEY_BYTES:
            raise ConfigurationError(
                "The anonymization key must be at least {} bytes".format(MIN_KEY_BYTES))
        if self.id_length < MIN_ID_LENGTH:
            raise ConfigurationError("id_length must be at least {}".format(MIN_ID_LENGTH))
        if self.n < 2 or self.n & (self.n - 1):
            raise ConfigurationError("The scrypt work factor n must be a power of two")
        if self.salt_scope not in ("batch", "fixed"):
            raise ConfigurationError("salt_scope must be 'batch' or 'fixed'")

    @classmethod
    def from_params(cls, anonymizer_params, environ=None):
        """Builds the config from the params 'anonymizer' table and the environment
        Args:
            anonymizer_params (dict):
                cost parameters and the name of the key variable
            environ (dict):
                environment to read the key from, defaults to os.environ
        Raises:
            ConfigurationError:
                if the key variable is unset or too short
        """
        environ = os.environ if environ is None else environ
        key_env = anonymizer_params["key_env"]
        key = environ.get(key_env)
        if not key:
            raise ConfigurationError(
                "Set {} to a secret of at least {} bytes; ids are never generated "
                "without a key".format(key_env, MIN_KEY_BYTES))
        return cls(
            secret_key=key.encode("utf-8"), n=anonymizer_params["n"],
            r=anonymizer_params["r"], p=anonymizer_params["p"],
            id_length=anonymizer_params["id_length"],
            salt_scope=anonymizer_params["salt_scope"],
            fixed_salt=anonymizer_params.get("fixed_salt", ""),
        )

    def salt(self, source_file, year):
        scope = self.fixed_salt if self.salt_scope == "fixed" else "{}:{}".format(
            source_file, year)
        return self.secret_key + SEPARATOR.encode("utf-8") + scope.encode("utf-8")


def strip_identifiers(record):
    """Blanks Name and Contact cells
    Args:
        record (RawRecord):
            the row
    Returns:
        RawRecord:
            copy of the row with identifier cells blanked
        list[CellVerdict]:
            one verdict per identifier column; removed values are never copied into them
    """
    updates = {}
    verdicts = []
    for column in record.cells:
        if column.role not in IDENTIFIER_ROLES:
            continue
        if record.cells[column].strip():
            updates[column] = ""
            verdicts.append(CellVerdict(record.row_index, column, Phase.EDITED, "I01",
                                        Action.DELETED, REDACTED, note="identifier removed"))
        else:
            verdicts.append(CellVerdict(record.row_index, column, Phase.SCREENED, "",
                                        Action.UNCHANGED, record.cells[column],
                                        record.cells[column]))
    return record.replace_cells(updates) if updates else record, verdicts


def identifier_material(record):
    """Text hashed into the pseudonym of a row

    The identifier cells in source order; when they are all blank, every cell plus the
    source file and row index, so blank-identifier rows never share an id.
    """
    parts = [record.cells[c] for c in record.cells if c.role in IDENTIFIER_ROLES]
    if not any(part.strip() for part in parts):
        parts = list(record.cells.values()) + [record.source_file, str(record.row_index)]
    return SEPARATOR.join(parts)


def pseudonymize(record, cfg, year=None, memo=None):
    """Keyed scrypt hash of the row's original identifiers

    Args:
        record (RawRecord):
            the row before identifiers are stripped
        cfg (AnonConfig):
            key and cost parameters
        year (int):
            surveillance year, part of the batch salt
        memo (dict):
            optional per-batch memo so identical identifier tuples are hashed once
    Returns:
        str:
            hex id of cfg.id_length characters
    """
    if not isinstance(cfg, AnonConfig):
        raise ConfigurationError("pseudonymize needs an AnonConfig with a secret key")
    password = identifier_material(record).encode("utf-8")
    salt = cfg.salt(record.source_file, year)
    key = (password, salt)
    if memo is not None and key in memo:
        return memo[key]
    digest = hashlib.scrypt(password, salt=salt, n=cfg.n, r=cfg.r, p=cfg.p,
                            dklen=math.ceil(cfg.id_length / 2))
    anon_id = digest.hex()[:cfg.id_length]
    if memo is not None:
        memo[key] = anon_id
    return anon_id
