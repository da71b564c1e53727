import os
from typing import Dict, Iterable

from tqdm import tqdm

from cascadesr.errors import ConfigurationError, OutputError

# Utils


## Console messages
def emit(message, to_print=True):
    """Print a status message when `to_print` is set.

    Parameters
    ----------
    message : string
        The message, conventionally prefixed with "[ 🟢 ]" or "[ 🔴 ]".
    to_print : bool, default=True
        Whether to print at all.
    """

    if to_print:
        print(message)


## Progress bar
def progress(iterable: Iterable, desc: str = "", enabled: bool = False, total=None):
    """Wrap `iterable` in a tqdm bar when `enabled`, else return it untouched.

    Parameters
    ----------
    iterable : iterable
        The loop to track.
    desc : string
        The label of the bar.
    enabled : bool, default=False
        Whether to draw the bar.
    total : int, default=None
        Length hint for generators.
    """

    if not enabled:
        return iterable
    return tqdm(iterable, desc=desc, total=total, ncols=100, leave=False)


## Key=value config files
def read_kv_file(path) -> Dict[str, str]:
    """Read a flat key=value text file.

    Blank lines and lines starting with '#' are skipped; surrounding
    whitespace is stripped from keys and values.

    Parameters
    ----------
    path : string
        The path of the config file.

    Returns
    -------
    values : dictionary
        The raw string values by key.
    """

    if not os.path.isfile(path):
        raise ConfigurationError(f"Config file doesn't exist: {path}")
    values = {}
    with open(path, "r", encoding="utf-8") as file:
        for number, line in enumerate(file, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{number}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def write_kv_file(path, values: Dict):
    try:
        with open(path, "w", encoding="utf-8") as file:
            for key, value in values.items():
                file.write(f"{key}={value}\n")
    except OSError as e:
        raise OutputError(f"Cannot write config to {path}: {e}") from e


## CSV output
def write_csv(frame, path, **kwargs):
    """Write a DataFrame without its index, creating missing parent directories.

    Parameters
    ----------
    frame : pd.DataFrame
        The table to write.
    path : string
        The destination file.
    **kwargs
        Forwarded to DataFrame.to_csv.
    """

    try:
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        frame.to_csv(path, index=False, **kwargs)
    except OSError as e:
        raise OutputError(f"Cannot write table to {path}: {e}") from e


## Print
### Metrics
def print_metrics(aggregate):
    """Formated print of the aggregated metric table.

    Parameters
    ----------
    aggregate : pd.DataFrame
        Output of MetricReport.aggregate().
    """

    print("_" * 80)
    print("|{:^16}|{:^14}|{:^14}|{:^14}|{:^14}".format("", "", "", "", ""))
    print(
        "|{:^16}|{:^14}|{:^14}|{:^14}|{:^14}".format(
            "algo", "psnr mean", "psnr std", "ssim mean", "ssim std"
        )
    )
    print("|{:^16}|{:^14}|{:^14}|{:^14}|{:^14}".format("", "", "", "", ""))
    for i in range(aggregate.shape[0]):
        data = dict(aggregate.iloc[i])
        print("-" * 80)
        print(
            "|{:^16.16}|{:^14.4f}|{:^14.4f}|{:^14.4f}|{:^14.4f}".format(
                str(data["algo"]) or "-",
                data["psnr_mean"],
                data["psnr_std"],
                data["ssim_mean"],
                data["ssim_std"],
            )
        )
    print(f"{'_'*80}\n\n")


### Benchmark
def print_bench(frame):
    """Formated print of benchmark timings.

    Parameters
    ----------
    frame : pd.DataFrame
        Output of BenchReport.to_frame().
    """

    print("_" * 60)
    print("|{:^16}|{:^20}|{:^20}".format("algo", "denoiser cost", "median seconds"))
    for i in range(frame.shape[0]):
        data = dict(frame.iloc[i])
        print("-" * 60)
        print(
            "|{:^16.16}|{:^20.4g}|{:^20.4f}".format(
                str(data["algo"]), data["flops"], data["median_seconds"]
            )
        )
    print(f"{'_'*60}\n\n")
