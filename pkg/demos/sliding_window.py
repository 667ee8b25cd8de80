"""
The client's evidence window
============================

A client keeps at most three full states and the diffs between them.  This
prints the buffered key sets as the client crosses an audit boundary.
"""

import random

from nveaudit import BehaviorScript, Client, StateServer
from nveaudit.audit_server import window_start
from nveaudit.mac import generate_key
from nveaudit.world import tunnel_grid

l = 10
rng = random.Random(0)
server = StateServer(tunnel_grid(), generate_key(rng))
client = Client(1, l, generate_key(rng), BehaviorScript(waypoints=((1, 1), (2, 2))))
client.do_init(server.handle_init(1, (0, 0), 0))

for _ in range(80):
    client.do_cycle(lambda delta: server.handle_update(1, delta))
    if client.t in (69, 70, 71, 72, 79, 80):
        diffs = sorted(client.buffer.diffs)
        print(f"t={client.t}: states {sorted(client.buffer.full_states)} diffs {diffs[0]}..{diffs[-1]}")

###############################################################################
# An audit at t0 covers the window starting at the second-to-last completed
# boundary, always between 2l and 3l-1 cycles long.

for t0 in (20, 29, 30, 71, 80):
    print(f"audit at {t0}: window starts at {window_start(t0, l)}")
