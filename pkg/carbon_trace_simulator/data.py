"""
Static tables behind the synthetic test systems.

Backbone values are per-unit on a 100 MVA base; feeder impedances are in
ohms and feeder loads in kW, as the 33-bus radial feeder is usually published.
"""

BASE_MVA = 100.0
FEEDER_KV = 12.66

# 4 x 4 meshed grid, bus 1 is the slack substation
backbone_buses = [str(i) for i in range(1, 17)]
slack_bus = "1"

backbone_edges = [
    # From, To, x (pu), r (pu)
    ("1", "2", 0.060, 0.006),
    ("2", "3", 0.070, 0.007),
    ("3", "4", 0.080, 0.008),
    ("5", "6", 0.070, 0.007),
    ("6", "7", 0.060, 0.006),
    ("7", "8", 0.080, 0.008),
    ("9", "10", 0.060, 0.006),
    ("10", "11", 0.070, 0.007),
    ("11", "12", 0.080, 0.008),
    ("13", "14", 0.070, 0.007),
    ("14", "15", 0.060, 0.006),
    ("15", "16", 0.080, 0.008),
    ("1", "5", 0.050, 0.005),
    ("5", "9", 0.070, 0.007),
    ("9", "13", 0.060, 0.006),
    ("2", "6", 0.080, 0.008),
    ("6", "10", 0.060, 0.006),
    ("10", "14", 0.070, 0.007),
    ("3", "7", 0.060, 0.006),
    ("7", "11", 0.080, 0.008),
    ("11", "15", 0.070, 0.007),
    ("4", "8", 0.070, 0.007),
    ("8", "12", 0.060, 0.006),
    ("12", "16", 0.080, 0.008),
]

# Bulk loads on the backbone (MW)
backbone_loads = {
    "4": 30.0,
    "7": 25.0,
    "9": 20.0,
    "10": 35.0,
    "11": 20.0,
    "12": 25.0,
    "13": 30.0,
    "14": 25.0,
    "15": 20.0,
    "16": 30.0,
}

conventional_units = [
    # id, bus, p_rate, p_lim, participation, a_down, b_down, a_over, b_over
    ("G1", "1", 250.0, 400.0, 1.0, 1.02, 0.0006, 0.78, 0.0005),
    ("G2", "2", 120.0, 180.0, 2.0, 0.62, 0.0008, 0.45, 0.0004),
    ("G3", "3", 80.0, 150.0, 1.0, 0.58, 0.0010, 0.42, 0.0005),
]

wind_farms = [
    # id, bus, v_in, v_rate, v_out, lambda, k
    ("WF1", "6", 3.0, 12.0, 25.0, 8.0, 2.0),
    ("WF2", "8", 3.5, 13.0, 25.0, 7.5, 1.8),
]

# 33-bus radial feeder: (from, to, r ohm, x ohm); bus 1 is the feeder head
feeder_edges = [
    (1, 2, 0.0922, 0.0470),
    (2, 3, 0.4930, 0.2511),
    (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941),
    (5, 6, 0.8190, 0.7070),
    (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351),
    (8, 9, 1.0300, 0.7400),
    (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650),
    (11, 12, 0.3744, 0.1238),
    (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129),
    (14, 15, 0.5910, 0.5260),
    (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210),
    (17, 18, 0.7320, 0.5740),
    (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554),
    (20, 21, 0.4095, 0.4784),
    (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083),
    (23, 24, 0.8980, 0.7091),
    (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034),
    (26, 27, 0.2842, 0.1447),
    (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006),
    (29, 30, 0.5075, 0.2585),
    (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619),
    (32, 33, 0.3410, 0.5302),
]

feeder_loads_kw = {
    2: 100, 3: 90, 4: 120, 5: 60, 6: 60, 7: 200, 8: 200, 9: 60, 10: 60,
    11: 45, 12: 60, 13: 60, 14: 120, 15: 60, 16: 60, 17: 60, 18: 90,
    19: 90, 20: 90, 21: 90, 22: 90, 23: 90, 24: 420, 25: 420, 26: 60,
    27: 60, 28: 60, 29: 120, 30: 200, 31: 150, 32: 210, 33: 60,
}  # fmt: skip

# EV charging stations per feeder, at these feeder-local buses
feeder_ev_buses = (18, 25, 33)

# Substation transformer linking a feeder head to the backbone
transformer_x = 0.050
transformer_r = 0.005

# Nine-node radial feeder with DERs at nodes 3, 5 and 8
nine_bus_edges = [(1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (2, 7), (7, 8), (8, 9)]
nine_bus_loads = {2: 1.0, 3: 0.8, 4: 1.2, 5: 0.6, 6: 0.9, 7: 1.1, 8: 0.7, 9: 1.0}
nine_bus_der_buses = (3, 5, 8)
