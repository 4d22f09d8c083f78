"""scikit-learn compatible wrappers.

``SymmetryProjector`` is a transformer onto reflection-invariant images;
``SPEGAN`` fits a generator to a batch of patches and samples from it.
Both take ``[n, C, H, W]`` arrays in [-1, 1].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import PatchDataset
from .gan.checkpoint import Checkpoint, sample_images, sample_latents
from .gan.models import DiscriminatorConfig, GeneratorConfig
from .gan.train import TrainConfig, train_loop
from .metrics import FeatureEmbedder, MetricsReport, compute_metrics, embed
from .symmetry import OP_ORDER, parse_ops, parse_spe, symmetrize, symmetry_residual, verify_dataset
from .validation import check_patches


class SymmetryProjector(TransformerMixin, BaseEstimator):
    """Average every image over the reflection group generated by ``ops``.

    ``fit`` records which reflections the training patches already satisfy
    (``common_set_``) at tolerance ``epsilon``.
    """

    def __init__(self, ops="hv", epsilon=1e-3):
        self.ops = ops
        self.epsilon = epsilon

    def fit(self, X, y=None):
        needs_square = any(op.diagonal for op in parse_ops(self.ops))
        X = check_patches(X, square=needs_square, value_range=None)
        candidates = OP_ORDER if X.shape[2] == X.shape[3] else parse_ops("hv")
        self.report_ = verify_dataset(list(X), candidates, self.epsilon)
        self.common_set_ = "".join(op.value for op in self.report_.common_set)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def transform(self, X):
        check_is_fitted(self, "report_")
        X = check_patches(X, value_range=None)
        return symmetrize(X, parse_ops(self.ops))

    def score(self, X, y=None):
        """Negative mean residual of ``X`` under the configured reflections."""
        X = check_patches(X, value_range=None)
        ops = parse_ops(self.ops)
        return -float(np.mean([symmetry_residual(x, op) for x in X for op in ops]))


class SPEGAN(BaseEstimator):
    """Hinge-loss GAN with optional symmetric pattern enforcement.

    Parameters mirror :class:`~spepattern.gan.train.TrainConfig` and
    :class:`~spepattern.gan.models.GeneratorConfig`. ``spe`` takes a config
    name such as ``"hv"``, ``"hvnp"``, ``"[hv;np]"`` or ``"none"``.
    """

    def __init__(
        self,
        spe="hv",
        spe_weight=1.0,
        similarity="l2",
        steps=2000,
        batch_size=8,
        lr=2e-4,
        beta1=0.5,
        beta2=0.999,
        z_dim=64,
        base_channels=32,
        attention=None,
        diffaug=("color", "translation"),
        snapshot_every=1000,
        run_dir=None,
        random_state=0,
    ):
        self.spe = spe
        self.spe_weight = spe_weight
        self.similarity = similarity
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.z_dim = z_dim
        self.base_channels = base_channels
        self.attention = attention
        self.diffaug = diffaug
        self.snapshot_every = snapshot_every
        self.run_dir = run_dir
        self.random_state = random_state

    def _configs(self, X):
        gcfg = GeneratorConfig.for_size(
            X.shape[2], z_dim=self.z_dim, base_channels=self.base_channels,
            attention=self.attention, output_channels=X.shape[1],
        )
        spe = parse_spe(self.spe or "none", weight=self.spe_weight, similarity=self.similarity)
        tcfg = TrainConfig(
            batch_size=self.batch_size, total_steps=self.steps, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            spe=spe, diffaug_policies=tuple(self.diffaug or ()), snapshot_every=self.snapshot_every,
            seed=int(self.random_state or 0),
        )
        dcfg = DiscriminatorConfig(input_size=X.shape[2], input_channels=X.shape[1])
        return gcfg, dcfg, tcfg

    def fit(self, X, y=None):
        X = check_patches(X, square=True)
        gcfg, dcfg, tcfg = self._configs(X)
        ds = PatchDataset.from_arrays(list(X))
        result = train_loop(ds, gcfg, dcfg, tcfg, out_dir=self.run_dir)
        self.generator_ = result.generator
        self.discriminator_ = result.discriminator
        self.history_ = result.history
        self.checkpoints_ = result.checkpoints
        self.train_config_ = tcfg
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def sample(self, n_samples=64, random_state=None):
        check_is_fitted(self, "generator_")
        seed = self.random_state if random_state is None else random_state
        return sample_images(self.generator_, sample_latents(n_samples, self.generator_.cfg.z_dim, seed))

    def checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "generator_")
        return Checkpoint.from_models(
            self.generator_, self.discriminator_, len(self.history_), int(self.random_state or 0),
            self.train_config_.to_dict(),
        )

    def evaluate(self, X, n_samples=64, embedder=FeatureEmbedder(), random_state=None) -> MetricsReport:
        X = check_patches(X)
        fake = self.sample(n_samples, random_state)
        return compute_metrics(embed(list(X), embedder), embed(list(fake), embedder), embedder=embedder.describe())

    def score(self, X, y=None):
        """Negative FID of generated samples against ``X`` (higher is better)."""
        return -self.evaluate(X, n_samples=max(len(X), 8)).fid
