"""Hand-built event logs with hand-computed NOV, AVD and PCV.

Every case measures POI 0 with source CBGs 1 and 2. A visit is
``(subject, poi, arrive, depart, cbg, k)``. Expected values are exact
fractions so the comparison can be equality after conversion to float.
"""

from fractions import Fraction as F

import numpy as np

from aicsim.engine import ARRIVE, DEPART, EXTERNAL_ARRIVAL, VISITOR_BASE, EventLog, visit_payload

WINDOW = (0, 7 * 1440)


def build_log(visits, dangling=(), visitors=()):
    log = EventLog()
    for s, p, a, d, c, k in visits:
        log.append(a, ARRIVE, s, p, int(visit_payload(np.array([c]), np.array([k]))[0]))
        log.append(d, DEPART, s, p, 0)
    for s, p, a, c, k in dangling:
        log.append(a, ARRIVE, s, p, int(visit_payload(np.array([c]), np.array([k]))[0]))
    for s, p, a, d in visitors:
        log.append(a, EXTERNAL_ARRIVAL, VISITOR_BASE + s, p, 0)
        log.append(d, DEPART, VISITOR_BASE + s, p, 0)
    return log.records


# (name, visits, extras, nov, avd, pcv)
CASES = [
    ("single_visit", [(1, 0, 0, 10, 1, 1)], {}, 1, F(10), F(0)),
    ("full_overlap", [(1, 0, 0, 10, 1, 1), (2, 0, 0, 10, 2, 1)], {}, 2, F(10), F(1)),
    ("overlap_exactly_five", [(1, 0, 0, 10, 1, 1), (2, 0, 5, 20, 2, 1)], {}, 2, F(25, 2), F(0)),
    ("overlap_six", [(1, 0, 0, 10, 1, 1), (2, 0, 4, 20, 2, 1)], {}, 2, F(13), F(1)),
    ("weights_no_overlap", [(1, 0, 0, 30, 1, 3), (2, 0, 100, 110, 2, 1)], {}, 4, F(25), F(0)),
    ("weights_partial", [(1, 0, 0, 30, 1, 3), (2, 0, 20, 40, 2, 1), (3, 0, 50, 60, 1, 2)], {},
     6, F(130, 6), F(2, 3)),
    ("other_poi_ignored", [(1, 1, 0, 100, 1, 1), (1, 0, 0, 8, 1, 1), (2, 0, 2, 8, 2, 1)], {}, 2, F(7), F(1)),
    ("third_cbg_ignored", [(1, 0, 0, 20, 1, 1), (3, 0, 0, 20, 3, 1), (2, 0, 100, 120, 2, 1)], {},
     3, F(20), F(0)),
    ("same_cbg_ignored", [(1, 0, 0, 20, 1, 1), (4, 0, 0, 20, 1, 1), (2, 0, 50, 60, 2, 1)], {}, 3, F(50, 3), F(0)),
    ("containment_seven", [(1, 0, 0, 100, 1, 1), (2, 0, 40, 47, 2, 1)], {}, 2, F(107, 2), F(1)),
    ("containment_five", [(1, 0, 0, 100, 1, 1), (2, 0, 40, 45, 2, 1)], {}, 2, F(105, 2), F(0)),
    ("repeat_visitor", [(1, 0, 0, 10, 1, 1), (1, 0, 20, 30, 1, 1), (2, 0, 22, 30, 2, 1)], {},
     3, F(28, 3), F(2, 3)),
    ("window_end_excluded", [(1, 0, 0, 10, 1, 1), (2, 0, 10080, 10090, 2, 1)], {}, 1, F(10), F(0)),
    ("window_last_minute_kept", [(1, 0, 0, 10, 1, 1), (2, 0, 10075, 10090, 2, 1)], {}, 2, F(25, 2), F(0)),
    ("different_days", [(1, 0, 1440, 1470, 1, 1), (2, 0, 20, 30, 2, 1)], {}, 2, F(20), F(0)),
    ("touching", [(1, 0, 0, 10, 1, 1), (2, 0, 10, 20, 2, 1)], {}, 2, F(10), F(0)),
    ("long_overlap_six", [(1, 0, 0, 106, 1, 1), (2, 0, 100, 200, 2, 1)], {}, 2, F(103), F(1)),
    ("unmatched_arrival", [(1, 0, 0, 10, 1, 1), (2, 0, 0, 10, 2, 1)], {"dangling": [(5, 0, 50, 1, 1)]},
     2, F(10), F(1)),
    ("heavy_sa_boundary", [(1, 0, 0, 60, 1, 1000), (2, 0, 55, 61, 2, 1)], {}, 1001, F(60006, 1001), F(0)),
    ("external_visitors_ignored", [(1, 0, 0, 10, 1, 1), (2, 0, 3, 10, 2, 1)],
     {"visitors": [(0, 0, 0, 10), (1, 0, 2, 9)]}, 2, F(17, 2), F(1)),
]
