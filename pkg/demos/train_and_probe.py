"""Train two small encoders, one on gaze-centred crops and one on random crops, then probe them.

    python3 demos/train_and_probe.py

Takes a few minutes on one core.  Probe images are object-fixation crops from
sessions the encoders never saw.
"""

import numpy as np

from gaze_ssl.evaluation import extract_features, train_probe
from gaze_ssl.playroom import SessionConfig, simulate_session
from gaze_ssl.ssl import SslConfig, SslModel, train
from gaze_ssl.streams import HUMAN_GAZE, OBJECTS_FIXATION, RANDOM_GAZE, build_stream


def probe_set(seeds):
    # one session mostly shows the toys that get picked up, so pool several
    crops, labels = [], []
    for seed in seeds:
        s = simulate_session(SessionConfig(duration_s=60.0, render_seed=seed, session_id=f"probe{seed}"))
        m = build_stream(s, OBJECTS_FIXATION, 32)
        crops.append(m.crops)
        labels.append(m.labels)
    return np.concatenate(crops), np.concatenate(labels)


def probe(encoder, x_tr, y_tr, x_te, y_te):
    feats = extract_features(encoder, np.concatenate([x_tr, x_te]))
    idx = np.arange(len(feats))
    return train_probe(feats, np.concatenate([y_tr, y_te]), idx[:len(x_tr)], idx[len(x_tr):]).accuracy


def main():
    train_session = simulate_session(SessionConfig(duration_s=60.0, render_seed=1, session_id="train"))
    x_tr, y_tr = probe_set([20, 21, 22, 23])
    x_te, y_te = probe_set([24, 25])
    cfg = SslConfig(lr=1e-3, epochs=3, steps_per_epoch=50, batch_size=32, widths=(8, 16, 32), groups=2)
    print(f"untrained  probe accuracy {probe(SslModel(cfg).encoder, x_tr, y_tr, x_te, y_te):.3f}")
    for strategy in (HUMAN_GAZE, RANDOM_GAZE):
        stream = build_stream(train_session, strategy, 32, seed=1)
        result = train([stream], cfg)
        curve = " ".join(f"{v:.3f}" for v in result.loss_curve)
        print(f"{strategy:<10} epoch losses {curve}, "
              f"probe accuracy {probe(result.model.encoder, x_tr, y_tr, x_te, y_te):.3f}")


if __name__ == "__main__":
    main()
