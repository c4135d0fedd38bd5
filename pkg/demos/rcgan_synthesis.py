"""Train a small conditional recurrent GAN and look at what it generates.

Run with ``python demos/rcgan_synthesis.py``; takes about two minutes.
"""
import numpy as np

from imuaug.preprocess import CHANNELS, preprocess_pipeline
from imuaug.rcgan import RcganConfig, synthesize, train_rcgan
from imuaug.simulator import simulate_dataset

rng = np.random.default_rng(0)
trips, _ = preprocess_pipeline(p.realize() for p in simulate_dataset(20, 20, rng))

# %% A reduced network; the discriminator gets a larger step and extra rounds.
config = RcganConfig(epochs=200, hidden=32, latent=8, d_learning_rate=0.5, d_rounds=5)
gen, disc, history = train_rcgan(trips, config, rng)
for epoch in range(0, config.epochs, 40):
    print(f"epoch {epoch:3d}  D {history.d_loss[epoch]:.3f}  G {history.g_loss[epoch]:.3f}")

# %% One fake trip per real trip, balanced by class. At this scale the fakes
# keep the class ordering of spread but are far smoother than real trips.
fakes = synthesize(gen, 1.0, len(trips), rng)
for cls in ("normal", "aggressive"):
    real = np.stack([t.values for t in trips if t.label == cls])
    fake = np.stack([t.values for t in fakes if t.label == cls])
    print(f"{cls:10s} {CHANNELS[0]} std real {real[..., 0].std():.3f} fake {fake[..., 0].std():.3f}")
