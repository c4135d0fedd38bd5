"""Walk through the signal and classification pipeline on a small simulated set.

Run with ``python demos/pipeline_walkthrough.py``; takes well under a minute.
"""
import numpy as np

from imuaug.features import feature_matrix, feature_names
from imuaug.preprocess import apply_minmax, fit_minmax, preprocess_pipeline
from imuaug.semisup import (auroc, predict, train_autoencoder, train_classifier,
                            transfer_weights)
from imuaug.simulator import simulate_dataset

rng = np.random.default_rng(0)

# %% Simulate 40 one-minute trips at 1000 Hz; the first 20 carry labels.
plans = simulate_dataset(40, 20, rng)
print("styles of the first plans:", [p.style for p in plans[:4]])

# %% Downsample to 1 Hz, smooth, cut to one minute, scale to the labeled range.
trips, scaler = preprocess_pipeline((p.realize() for p in plans),
                                    fit_on=lambda t: t.label is not None)
print("processed trip shape:", trips[0].values.shape)
print("per-channel min/max fitted on labeled trips:", scaler.min.round(3), scaler.max.round(3))

# %% Nine statistics per channel give 45 features per trip.
X = feature_matrix(trips)
names = feature_names()
print("first features of trip 0:", {n: round(float(v), 4) for n, v in zip(names[:4], X[0, :4])})

# %% Pretrain the autoencoder on the unlabeled trips, then fine-tune a classifier.
unlabeled = np.array([t.label is None for t in trips])
fscale = fit_minmax(X[unlabeled])
S = apply_minmax(fscale, X)
ae, history = train_autoencoder(S[unlabeled], 100, 0.01, rng)
print(f"autoencoder loss {history[0]:.4f} -> {history[-1]:.4f}")

labeled = ~unlabeled
clf = train_classifier(transfer_weights(ae, "tanh", rng), S[labeled],
                       [t.label for t in trips if t.label is not None], 200, 0.01)

# %% Score every trip against its hidden class.
value, curve = auroc(predict(clf, S), [t.true_class for t in trips])
print(f"AUROC on all {len(trips)} trips: {value:.3f} ({len(curve.fpr)} ROC points)")
