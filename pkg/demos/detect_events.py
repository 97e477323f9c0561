"""Velocity-threshold saccade detection on a simulated session, scored against the simulator's plan.

    python3 demos/detect_events.py
"""

import numpy as np

from gaze_ssl.events import SACCADE, GazeTrace, compute_metrics, detect_saccades
from gaze_ssl.playroom import GazePolicy, SessionConfig, simulate_session


def main():
    for name, policy in [("toddler-like", GazePolicy.toddler(policy_seed=2)),
                         ("adult-like", GazePolicy.adult(policy_seed=2))]:
        session = simulate_session(SessionConfig(duration_s=120.0, render_seed=2, session_id=name, policy=policy))
        seg = detect_saccades(GazeTrace.from_session(session))
        detected = np.zeros(len(session), bool)
        for kind, a, b in seg.events:
            if kind == SACCADE:
                detected[a:b + 1] = True
        planned = session.phase == 1
        m = compute_metrics(seg, session.target_labels(), session.intr.fps)
        print(f"{name}: {sum(e[0] == SACCADE for e in seg.events)} saccades, "
              f"{100 * detected[planned].mean():.0f}% of planned saccade frames detected")
        print(f"  fixation {m.mean_fixation_s:.2f} s, look bout {m.mean_look_bout_s:.2f} s, "
              f"hold look {m.mean_hold_look_s:.2f} s (configured {policy.mean_hold_look_s:.1f} s), "
              f"cumulative looking {m.cumulative_look_s:.0f} s")


if __name__ == "__main__":
    main()
