"""Codes shared by both kernel backends.

Both backends consume ``rng.random()`` draws in exactly the same order, so a
given Generator state yields identical results whichever backend runs.
Per attempt the order is: transmitter role (only when a fresh sensor is
polled), chunk-code noise, bin of the true chunk, bin of the decoded chunk
(if distinct), bin of the false chunk (half-split, if distinct), then k
verifier-role draws followed by k verifier-noise draws.
"""

# transmitter / verifier roles
HONEST = 0
BYZ = 1          # policy-driven Byzantine sensor
BYZ_TRUTH = 2    # half-split group repeating the true message
BYZ_FALSE = 3    # half-split group pushing the false message

# Byzantine verifier behaviour
VERIFY_HONEST = 0
VERIFY_COLLUDE = 1
VERIFY_OBSTRUCT = 2

VERIFY_MODES = {"honest": VERIFY_HONEST, "collude": VERIFY_COLLUDE, "obstruct": VERIFY_OBSTRUCT}

# attempt cells: C & ~A1, C & A1, ~C & decoded != true, ~C & decoded == true
CELL_TRUE_CLEAN = 0
CELL_TRUE_GARBLED = 1
CELL_FALSE_WRONG = 2
CELL_FALSE_RIGHT = 3
CELL_NAMES = ("true_clean", "true_garbled", "false_wrong", "false_right")

# event columns per cell
EV_TOTAL = 0
EV_A2 = 1
EV_A3 = 2
EV_B1 = 3
EV_B2 = 4
EV_A1 = 5
EVENT_NAMES = ("attempts", "A2", "A3", "B1", "B2", "A1")
