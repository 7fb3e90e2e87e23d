"""Season-relative day indexing.

Seasons run on a 365-day non-leap calendar starting at a zone's
``season_start_doy`` and may cross the new year, so day-of-year values wrap.
"""
import numpy as np

DAYS_PER_YEAR = 365
SEASON_LENGTH = 364
DAYS_PER_WEEK = 7

_MONTH_LENGTHS = np.array([31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31])
_MONTH_OF_DOY = np.repeat(np.arange(1, 13), _MONTH_LENGTHS)  # index doy-1


def month_of_doy(doy):
    """Calendar month (1..12) of a day of year, vectorised; doy 366 maps to December."""
    doy = np.minimum(np.asarray(doy), DAYS_PER_YEAR)
    return _MONTH_OF_DOY[doy - 1]


def doy_of_index(day_index, start_doy):
    return (start_doy - 1 + np.asarray(day_index)) % DAYS_PER_YEAR + 1


def index_of_doy(doy, start_doy):
    return (np.asarray(doy) - start_doy) % DAYS_PER_YEAR


def week_end_indices(n_days=SEASON_LENGTH):
    """Day indices closing each full week: 6, 13, 20, ..."""
    return np.arange(DAYS_PER_WEEK - 1, n_days, DAYS_PER_WEEK)
