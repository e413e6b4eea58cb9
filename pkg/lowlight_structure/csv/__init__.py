import pathlib
import typing
import structlog

logger = structlog.get_logger(__name__)

try:
    import pandas as pd
except ImportError as e:
    logger.warn("pandas not found")

try:
    from flatten_json import flatten
except ImportError as e:
    logger.warn("flatten_json not found")

__all__ = (
    'LOSS_COLUMNS', 'append_loss_rows', 'read_loss_csv', 'truncate_after', 'write_records_csv', 'write_flat_csv',
)

LOSS_COLUMNS = ("step", "appearance", "structure", "adversarial", "discriminator", "enhancement", "total")


def append_loss_rows(path: typing.Union[str, pathlib.Path], rows: typing.Iterable[typing.Sequence[float]]):
    """Append rows in LOSS_COLUMNS order; the header is written with the first row only."""
    path = pathlib.Path(path)
    df = pd.DataFrame([tuple(row) for row in rows], columns=LOSS_COLUMNS)
    if df.empty:
        return
    df["step"] = df["step"].astype("int64")
    write_header = not path.exists() or path.stat().st_size == 0
    df.to_csv(path, mode="a", header=write_header, index=False, float_format="%.10g")


def read_loss_csv(path: typing.Union[str, pathlib.Path]) -> "pd.DataFrame":
    df = pd.read_csv(path)
    missing = [column for column in LOSS_COLUMNS if column not in df.columns]
    if missing:
        raise ValueError(f"{path} lacks loss columns {missing}")
    return df


def truncate_after(path: typing.Union[str, pathlib.Path], step: int):
    """Drop rows logged after ``step`` so a resumed run doesn't duplicate them."""
    path = pathlib.Path(path)
    if not path.exists():
        return
    df = read_loss_csv(path)
    df[df["step"] <= step].to_csv(path, index=False, float_format="%.10g")


def write_records_csv(path: typing.Union[str, pathlib.Path], records: typing.Sequence[dict]) -> "pd.DataFrame":
    df = pd.DataFrame(list(records))
    df.to_csv(path, index=False, float_format="%.10g")
    return df


def write_flat_csv(path: typing.Union[str, pathlib.Path], nested: typing.Dict[str, dict], key: str = "id"):
    """One row per top-level key, nested dicts flattened into ``a_b_c`` columns."""
    rows = [dict({key: name}, **flatten(value, "_")) for name, value in nested.items()]
    return write_records_csv(path, rows)
