from pathlib import Path

import numpy as np
import pandas as pd

from .fitting import CavityReport


def build_table_s1(datafile=None):
    """Read the measured comb parameters into a DataFrame.

    One row per filter window, indexed by its centre wavelength (nm), with
    the free spectral range and the signal and idler linewidths (Hz).  The
    idler linewidth is NaN where the idler is not confined.
    """
    if datafile is None:
        parent = Path(__file__).parent
        datafile = parent/"resources/table-s1.txt"
    table = pd.read_csv(datafile, sep=' ', index_col='wavelength_nm')
    expected = ['fsr_hz', 'fwhm_signal_hz', 'fwhm_idler_hz']
    if list(table.columns) != expected:
        raise ValueError(
            f"{datafile} must have columns 'wavelength_nm' and "
            f"{', '.join(repr(c) for c in expected)}."
        )
    return table.sort_index()


def cavity_table(table):
    """Add finesse and Q factor columns to a comb parameter table.

    Parameters
    ----------
    table : :class:`pandas.DataFrame`
        As returned by :func:`build_table_s1`.

    Returns
    -------
    :class:`pandas.DataFrame`
        With ``finesse`` and ``q_factor`` for the signal and, where the idler
        linewidth is known, ``idler_finesse`` and ``idler_q_factor``.

    Examples
    --------
    >>> table = cavity_table(build_table_s1())
    >>> table.loc[1580, 'finesse'].round()
    28.0

    """
    rows = []
    for wavelength, row in table.iterrows():
        signal = CavityReport.from_values(
            row['fwhm_signal_hz'], row['fsr_hz'], wavelength
        )
        entry = {'finesse': signal.finesse, 'q_factor': signal.q_factor}
        if np.isnan(row['fwhm_idler_hz']):
            entry.update(idler_finesse=np.nan, idler_q_factor=np.nan)
        else:
            # idler Q referred to the signal frequency
            idler = CavityReport.from_values(
                row['fwhm_idler_hz'], row['fsr_hz'], wavelength
            )
            entry.update(
                idler_finesse=idler.finesse, idler_q_factor=idler.q_factor
            )
        rows.append(entry)
    extra = pd.DataFrame(rows, index=table.index)
    return pd.concat([table, extra], axis='columns')
