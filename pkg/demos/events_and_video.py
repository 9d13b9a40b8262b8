"""Event frames from a raw stream, then event instances cut from a grey video.

    python3 demos/events_and_video.py
"""

import numpy as np

from evclip.events import EventStream, aggregate_events, event_frame
from evclip.video import majority_vote_label, segment_video

rng = np.random.default_rng(0)

# a burst of events on a 6x4 sensor; one pixel fires far more than the rest
n = 40
x = np.r_[rng.integers(0, 6, n - 15), np.full(15, 2)]
y = np.r_[rng.integers(0, 4, n - 15), np.full(15, 1)]
stream = EventStream(x, y, np.arange(n) * 10, rng.choice([-1, 1], n), width=6, height=4)

print("raw counts\n", aggregate_events(stream))
print("frame, no clamp (busy pixel dominates)\n", event_frame(stream, cap=None).round(3))
print("frame, clamp 10\n", event_frame(stream, cap=10).round(3))

# a 48-frame clip: a bright square slides right during the middle third
frames = np.full((48, 24, 24), 40, np.uint8)
for t in range(16, 32):
    frames[t, 8:16, t - 12:t - 4] = 200
labels = [0] * 16 + [1] * 16 + [0] * 16
for inst in segment_video(frames, labels):
    a, b = inst.source_range
    print(f"frames {a:2d}-{b - 1:2d}  label={inst.label}  active pixels={int((inst.frame > 0).sum())}")

print("tie [0, 1, 1, 0] votes", majority_vote_label([0, 1, 1, 0]))
